#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dragonnet {

/// Invalid sizes, hyperparameters or experiment settings.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Dimension mismatch between matrices, layers or parameter sets.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A value left the domain of a formula (g at 0 or 1, non-finite loss).
class NumericError : public std::domain_error {
 public:
  NumericError(std::string term, const std::string& what)
      : std::domain_error(term + ": " + what), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int epoch, const std::string& what)
      : std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ": " + what),
        epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Nothing left to estimate on (e.g. every row trimmed away).
struct EstimationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An estimator applied to a model that cannot support it.
struct MisuseError : std::logic_error {
  using std::logic_error::logic_error;
};

class IngestionError : public std::runtime_error {
 public:
  IngestionError(const std::string& what, std::vector<std::string> offenders)
      : std::runtime_error(compose(what, offenders)), offenders_(std::move(offenders)) {}
  const std::vector<std::string>& offenders() const noexcept { return offenders_; }

 private:
  static std::string compose(const std::string& what, const std::vector<std::string>& offenders) {
    std::string msg = what;
    for (const auto& o : offenders) msg += "\n  " + o;
    return msg;
  }
  std::vector<std::string> offenders_;
};

struct ReportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dragonnet
