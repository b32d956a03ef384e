#ifndef GDPS_ERROR_HPP
#define GDPS_ERROR_HPP

#include <stdexcept>
#include <string>

namespace gdps {

/// Input/validation failures map to exit code 1, numerical/analysis
/// failures to exit code 2.
enum class ErrorKind { validation, analysis };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), kind_(kind), stage_(std::move(stage)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& stage() const noexcept { return stage_; }
  int exit_code() const noexcept { return kind_ == ErrorKind::validation ? 1 : 2; }

 private:
  ErrorKind kind_;
  std::string stage_;
};

inline Error validation_error(std::string stage, const std::string& message) {
  return Error(ErrorKind::validation, std::move(stage), message);
}

inline Error analysis_error(std::string stage, const std::string& message) {
  return Error(ErrorKind::analysis, std::move(stage), message);
}

}  // namespace gdps

#endif
