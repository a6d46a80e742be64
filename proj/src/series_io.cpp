#include "dartclean/series_io.hpp"

#include "dartclean/error.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace dartclean {

namespace {

std::vector<std::string_view> split_whitespace(std::string_view line)
{
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t'))
      ++i;
    std::size_t const start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t')
      ++i;
    if (i > start)
      out.push_back(line.substr(start, i - start));
  }
  return out;
}

template <typename T> bool parse_number(std::string_view token, T &value)
{
  if (!token.empty() && token.front() == '+')
    token.remove_prefix(1);
  auto const [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
  return ec == std::errc{} && ptr == token.data() + token.size();
}

bool blank(std::string_view line)
{
  return std::all_of(line.begin(), line.end(), [](char c) { return c == ' ' || c == '\t'; });
}

std::string shortest_decimal(double v)
{
  std::array<char, 64> buf{};
  auto const [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc{})
    throw IoError("cannot format value");
  return std::string(buf.data(), ptr);
}

std::string fixed6(double v)
{
  std::array<char, 64> buf{};
  int const n = std::snprintf(buf.data(), buf.size(), "%.6f", v);
  return std::string(buf.data(), static_cast<std::size_t>(n));
}

} // namespace

CleanedOutput make_cleaned_output(std::vector<std::int64_t> timestamps, Vector raw, Vector cleaned, Mask spike,
                                  Mask step)
{
  auto const n = static_cast<Index>(timestamps.size());
  if (raw.size() != n || cleaned.size() != n || spike.size() != n || step.size() != n)
    throw ShapeError("cleaned output columns differ in length");
  CleanedOutput out;
  out.residual = raw - cleaned;
  out.timestamps = std::move(timestamps);
  out.raw = std::move(raw);
  out.cleaned = std::move(cleaned);
  out.spike = std::move(spike);
  out.step = std::move(step);
  return out;
}

std::int64_t civil_to_epoch(int year, unsigned month, unsigned day, int hour, int minute, int second)
{
  using namespace std::chrono;
  year_month_day const ymd{std::chrono::year{year}, std::chrono::month{month}, std::chrono::day{day}};
  if (!ymd.ok())
    throw DataError("invalid calendar date");
  if (hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 60)
    throw DataError("invalid time of day");
  auto const days_since = sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days_since) * 86400 + hour * 3600 + minute * 60 + second;
}

std::string format_iso8601(std::int64_t epoch_seconds)
{
  using namespace std::chrono;
  sys_seconds const tp{seconds{epoch_seconds}};
  auto const day_point = floor<days>(tp);
  year_month_day const ymd{day_point};
  hh_mm_ss const hms{tp - day_point};
  std::array<char, 32> buf{};
  int const n = std::snprintf(buf.data(), buf.size(), "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                              static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                              static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                              static_cast<int>(hms.seconds().count()));
  return std::string(buf.data(), static_cast<std::size_t>(n));
}

std::int64_t parse_iso8601(std::string_view text)
{
  // YYYY-MM-DDTHH:MM:SSZ
  if (text.size() != 20 || text[4] != '-' || text[7] != '-' || text[10] != 'T' || text[13] != ':' ||
      text[16] != ':' || text[19] != 'Z')
    throw DataError("malformed timestamp '" + std::string(text) + "'");
  int y = 0, h = 0, mi = 0, s = 0;
  unsigned mo = 0, d = 0;
  if (!parse_number(text.substr(0, 4), y) || !parse_number(text.substr(5, 2), mo) ||
      !parse_number(text.substr(8, 2), d) || !parse_number(text.substr(11, 2), h) ||
      !parse_number(text.substr(14, 2), mi) || !parse_number(text.substr(17, 2), s))
    throw DataError("malformed timestamp '" + std::string(text) + "'");
  return civil_to_epoch(y, mo, d, h, mi, s);
}

RawSeries parse_dart(std::istream &in)
{
  std::vector<std::int64_t> timestamps;
  std::vector<double> values;
  std::vector<SampleFlag> flags;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty() || line.front() == '#' || blank(line))
      continue;

    auto const cols = split_whitespace(line);
    if (cols.size() != 8)
      throw ParseError(line_no, "expected 8 columns, found " + std::to_string(cols.size()));

    int year = 0, hour = 0, minute = 0, second = 0;
    unsigned month = 0, day = 0;
    double height = 0.0;
    if (!parse_number(cols[0], year) || !parse_number(cols[1], month) || !parse_number(cols[2], day) ||
        !parse_number(cols[3], hour) || !parse_number(cols[4], minute) || !parse_number(cols[5], second))
      throw ParseError(line_no, "unparseable date/time field");
    if (!parse_number(cols[7], height) || !std::isfinite(height))
      throw ParseError(line_no, "unparseable height '" + std::string(cols[7]) + "'");

    std::int64_t t = 0;
    try {
      t = civil_to_epoch(year, month, day, hour, minute, second);
    } catch (DataError const &e) {
      throw ParseError(line_no, e.what());
    }
    if (!timestamps.empty() && t <= timestamps.back())
      throw ParseError(line_no, "timestamp not strictly increasing");

    bool const missing = std::abs(height - kDartSentinel) <= 1e-6;
    timestamps.push_back(t);
    values.push_back(missing ? 0.0 : height);
    flags.push_back(missing ? SampleFlag::flagged_missing : SampleFlag::valid);
  }
  if (in.bad())
    throw IoError("read failure");

  RawSeries series;
  series.timestamps = std::move(timestamps);
  series.values = Eigen::Map<Vector const>(values.data(), static_cast<Index>(values.size()));
  series.flags = std::move(flags);
  return series;
}

RawSeries parse_dart(std::string_view text)
{
  std::istringstream in{std::string(text)};
  return parse_dart(in);
}

RawSeries read_dart_file(std::filesystem::path const &path)
{
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  return parse_dart(in);
}

void write_dart(std::ostream &out, RawSeries const &series, std::string_view header)
{
  if (series.timestamps.size() != static_cast<std::size_t>(series.size()) ||
      series.flags.size() != static_cast<std::size_t>(series.size()))
    throw ShapeError("raw series columns differ in length");
  if (!header.empty()) {
    std::istringstream lines{std::string(header)};
    std::string l;
    while (std::getline(lines, l))
      out << "# " << l << '\n';
  }
  out << "#YY  MM DD hh mm ss T   HEIGHT\n";
  out << "#yr  mo dy hr mn  s -        m\n";
  using namespace std::chrono;
  for (Index i = 0; i < series.size(); ++i) {
    sys_seconds const tp{seconds{series.timestamps[static_cast<std::size_t>(i)]}};
    auto const day_point = floor<days>(tp);
    year_month_day const ymd{day_point};
    hh_mm_ss const hms{tp - day_point};
    std::array<char, 48> buf{};
    std::snprintf(buf.data(), buf.size(), "%04d %02u %02u %02d %02d %02d 1 ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                  static_cast<int>(hms.seconds().count()));
    out << buf.data() << (series.flagged(i) ? std::string("9999.000") : shortest_decimal(series.values[i])) << '\n';
  }
  if (!out)
    throw IoError("write failure");
}

void write_dart_file(std::filesystem::path const &path, RawSeries const &series, std::string_view header)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  write_dart(out, series, header);
}

void write_cleaned_csv(std::ostream &out, CleanedOutput const &output)
{
  auto const n = static_cast<Index>(output.timestamps.size());
  if (output.raw.size() != n || output.cleaned.size() != n || output.spike.size() != n || output.step.size() != n ||
      output.residual.size() != n)
    throw ShapeError("cleaned output columns differ in length");
  out << "time_iso8601,raw_m,cleaned_m,spike,step,residual_m\n";
  for (Index i = 0; i < n; ++i) {
    out << format_iso8601(output.timestamps[static_cast<std::size_t>(i)]) << ',' << fixed6(output.raw[i]) << ','
        << fixed6(output.cleaned[i]) << ',' << (output.spike[i] ? 1 : 0) << ',' << (output.step[i] ? 1 : 0) << ','
        << fixed6(output.residual[i]) << '\n';
  }
  if (!out)
    throw IoError("write failure");
}

void write_cleaned_csv(std::filesystem::path const &path, CleanedOutput const &output)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw IoError("cannot open " + path.string() + " for writing");
  write_cleaned_csv(out, output);
}

CleanedOutput read_cleaned_csv(std::istream &in)
{
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  if (line != "time_iso8601,raw_m,cleaned_m,spike,step,residual_m")
    throw ParseError(1, "unexpected header");

  std::vector<std::int64_t> t;
  std::vector<double> raw, cleaned, residual;
  std::vector<bool> spike, step;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::vector<std::string_view> f;
    std::string_view rest = line;
    for (std::size_t pos; (pos = rest.find(',')) != std::string_view::npos; rest.remove_prefix(pos + 1))
      f.push_back(rest.substr(0, pos));
    f.push_back(rest);
    if (f.size() != 6)
      throw ParseError(line_no, "expected 6 fields");
    double r = 0, c = 0, res = 0;
    int s = 0, st = 0;
    if (!parse_number(f[1], r) || !parse_number(f[2], c) || !parse_number(f[3], s) || !parse_number(f[4], st) ||
        !parse_number(f[5], res))
      throw ParseError(line_no, "unparseable field");
    try {
      t.push_back(parse_iso8601(f[0]));
    } catch (DataError const &e) {
      throw ParseError(line_no, e.what());
    }
    raw.push_back(r);
    cleaned.push_back(c);
    spike.push_back(s != 0);
    step.push_back(st != 0);
    residual.push_back(res);
  }

  auto const n = static_cast<Index>(t.size());
  CleanedOutput out;
  out.timestamps = std::move(t);
  out.raw = Eigen::Map<Vector>(raw.data(), n);
  out.cleaned = Eigen::Map<Vector>(cleaned.data(), n);
  out.residual = Eigen::Map<Vector>(residual.data(), n);
  out.spike.resize(n);
  out.step.resize(n);
  for (Index i = 0; i < n; ++i) {
    out.spike[i] = spike[static_cast<std::size_t>(i)];
    out.step[i] = step[static_cast<std::size_t>(i)];
  }
  return out;
}

double median_cadence(std::vector<std::int64_t> const &timestamps)
{
  if (timestamps.size() < 2)
    return 0.0;
  std::vector<std::int64_t> d(timestamps.size() - 1);
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    d[i - 1] = timestamps[i] - timestamps[i - 1];
  auto const mid = d.begin() + static_cast<std::ptrdiff_t>(d.size() / 2);
  std::nth_element(d.begin(), mid, d.end());
  if (d.size() % 2 == 1)
    return static_cast<double>(*mid);
  auto const lower = *std::max_element(d.begin(), mid);
  return 0.5 * static_cast<double>(lower + *mid);
}

} // namespace dartclean
