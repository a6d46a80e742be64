#pragma once

#include "dartclean/types.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace dartclean {

enum class SampleFlag : std::uint8_t
{
  valid,
  flagged_missing,
};

// NOAA DART missing-value placeholder.
inline constexpr double kDartSentinel = 9999.0;

// Timestamped water-column heights as read from a DART text file.
struct RawSeries
{
  std::vector<std::int64_t> timestamps; // seconds since the Unix epoch, strictly increasing
  Vector values;                        // meters; unusable where flagged
  std::vector<SampleFlag> flags;

  Index size() const { return values.size(); }
  bool flagged(Index i) const { return flags[static_cast<std::size_t>(i)] == SampleFlag::flagged_missing; }
};

struct CleanedOutput
{
  std::vector<std::int64_t> timestamps;
  Vector raw;
  Vector cleaned;
  Mask spike;
  Mask step;
  Vector residual; // raw - cleaned
};

// Builds a CleanedOutput with residual = raw - cleaned.
CleanedOutput make_cleaned_output(std::vector<std::int64_t> timestamps, Vector raw, Vector cleaned, Mask spike,
                                  Mask step);

// DART text: '#' header lines, data rows "YEAR MONTH DAY HOUR MIN SEC T HEIGHT".
// HEIGHT within 1e-6 of 9999 marks the sample flagged_missing.
RawSeries parse_dart(std::istream &in);
RawSeries parse_dart(std::string_view text);
RawSeries read_dart_file(std::filesystem::path const &path);

// Emits a DART text file; flagged samples are written as the 9999 sentinel and
// values use the shortest round-trip decimal representation.
void write_dart(std::ostream &out, RawSeries const &series, std::string_view header = "");
void write_dart_file(std::filesystem::path const &path, RawSeries const &series, std::string_view header = "");

// CSV with header `time_iso8601,raw_m,cleaned_m,spike,step,residual_m`, 6 decimals.
void write_cleaned_csv(std::ostream &out, CleanedOutput const &output);
void write_cleaned_csv(std::filesystem::path const &path, CleanedOutput const &output);
CleanedOutput read_cleaned_csv(std::istream &in);

std::string format_iso8601(std::int64_t epoch_seconds);
std::int64_t parse_iso8601(std::string_view text);
std::int64_t civil_to_epoch(int year, unsigned month, unsigned day, int hour, int minute, int second);

// Median spacing between consecutive timestamps, 0 for fewer than two samples.
double median_cadence(std::vector<std::int64_t> const &timestamps);

} // namespace dartclean
