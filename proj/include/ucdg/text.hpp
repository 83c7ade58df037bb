#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ucdg {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Shortest decimal text that reads back to the same double.
std::string format_double(double v);
double parse_double(std::string_view s);
long long parse_int(std::string_view s);
std::size_t parse_size(std::string_view s);
bool parse_bool(std::string_view s);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

// Line-oriented `key = value` text; '#' starts a comment. Duplicate keys and
// malformed lines are rejected with their line number.
std::map<std::string, std::string> parse_key_values(std::string_view text);

}  // namespace ucdg
