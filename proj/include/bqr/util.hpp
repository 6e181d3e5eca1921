#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bqr {

/// Error for configuration / environment / IO problems that should abort the
/// current command. Per-item data problems are collected, not thrown.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Calendar date, no timezone. Comparable by (year, month, day).
struct Date {
    int year = 0;
    int month = 1;
    int day = 1;

    auto operator<=>(const Date&) const = default;

    /// Accepts YYYY-MM-DD or YYYY/MM/DD.
    static std::optional<Date> parse(std::string_view text);

    /// "YYYY-MM-DD"
    std::string iso() const;
    /// "YYYY/MM/DD" as used by the E-utilities date parameters.
    std::string slashed() const;
};

struct DateRange {
    Date min;
    Date max;

    bool contains(const Date& d) const { return min <= d && d <= max; }
    bool operator==(const DateRange&) const = default;
};

// ---------------------------------------------------------------- strings

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split_lines(std::string_view text);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Case-fold and collapse whitespace runs; used for title-identity matching.
std::string normalize_title(std::string_view title);

/// Natural id ordering: all-digit ids compare numerically, otherwise
/// lexicographically ("7" < "43" < "112" < "CD010438").
bool id_less(const std::string& a, const std::string& b);

/// True when every character is an ASCII digit and the string is non-empty.
bool is_digit_string(std::string_view s);

/// Fixed-precision decimal formatting ("0.131" for format_fixed(0.13131, 3)).
std::string format_fixed(double value, int decimals);

// ------------------------------------------------------------------ files

std::string read_file(const std::string& path);

/// Write via temp file in the same directory, then rename into place.
void write_file_atomic(const std::string& path, std::string_view content);

/// SHA-256 of the input as a lowercase hex string.
std::string sha256_hex(std::string_view data);

/// Value of an environment variable, or nullopt when unset/empty.
std::optional<std::string> env_var(const std::string& name);

} // namespace bqr
