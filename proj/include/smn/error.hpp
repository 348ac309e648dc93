#pragma once

#include <stdexcept>
#include <string>

namespace smn {

/// Error categories. Each maps to a distinct process exit code in the CLI.
enum class errc {
  config = 2,
  io = 3,
  numeric = 4,
  checkpoint = 5,
  dimension = 6,
  contract = 7,
  parse = 8,
};

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const { return code_; }
  int exit_code() const { return static_cast<int>(code_); }

 private:
  errc code_;
};

struct config_error : error {
  explicit config_error(const std::string& w) : error(errc::config, w) {}
};
struct io_error : error {
  explicit io_error(const std::string& w) : error(errc::io, w) {}
};
struct numeric_error : error {
  explicit numeric_error(const std::string& w) : error(errc::numeric, w) {}
};
struct checkpoint_error : error {
  explicit checkpoint_error(const std::string& w) : error(errc::checkpoint, w) {}
};
struct dim_error : error {
  explicit dim_error(const std::string& w) : error(errc::dimension, w) {}
};
struct contract_error : error {
  explicit contract_error(const std::string& w) : error(errc::contract, w) {}
};
struct parse_error : error {
  explicit parse_error(const std::string& w) : error(errc::parse, w) {}
};

}  // namespace smn
