#pragma once

#include <stdexcept>
#include <string>

namespace tandem {

// Root of every error the library throws. `kind()` names the failure class so
// the CLI can map it to an exit code without RTTI ladders.
class Error : public std::runtime_error {
 public:
  Error(const char* kind, const std::string& what)
      : std::runtime_error(std::string(kind) + ": " + what), kind_(kind) {}
  const char* kind() const noexcept { return kind_; }

 private:
  const char* kind_;
};

#define TANDEM_DEFINE_ERROR(Name)                                      \
  class Name : public Error {                                          \
   public:                                                             \
    explicit Name(const std::string& what) : Error(#Name, what) {}    \
  }

// dataio
TANDEM_DEFINE_ERROR(ParseError);
TANDEM_DEFINE_ERROR(SchemaError);
TANDEM_DEFINE_ERROR(TransformError);
TANDEM_DEFINE_ERROR(SplitError);
// grad_engine
TANDEM_DEFINE_ERROR(ShapeError);
TANDEM_DEFINE_ERROR(BackwardError);
TANDEM_DEFINE_ERROR(BatchNormError);
// model
TANDEM_DEFINE_ERROR(GateError);
TANDEM_DEFINE_ERROR(RouteError);
TANDEM_DEFINE_ERROR(BoundaryError);
TANDEM_DEFINE_ERROR(PredictError);
// training
TANDEM_DEFINE_ERROR(LossError);
TANDEM_DEFINE_ERROR(OptimizerError);
TANDEM_DEFINE_ERROR(FinetuneError);
TANDEM_DEFINE_ERROR(ConfigError);
TANDEM_DEFINE_ERROR(CheckpointError);
// analysis
TANDEM_DEFINE_ERROR(MetricError);
TANDEM_DEFINE_ERROR(SpectralError);
TANDEM_DEFINE_ERROR(DiagnosticsError);

#undef TANDEM_DEFINE_ERROR

}  // namespace tandem
