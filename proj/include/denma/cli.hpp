#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "denma/dataset.hpp"
#include "denma/error.hpp"
#include "denma/model.hpp"
#include "denma/model_spec.hpp"
#include "denma/sampler.hpp"

namespace denma {

inline constexpr const char* kVersion = "0.1.0";

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitParse = 2;
inline constexpr int kExitValidation = 3;
inline constexpr int kExitSampling = 4;
inline constexpr int kExitRunDir = 5;

int exit_code(const Error& error);

// Everything a finished fit directory holds, reloaded and hash-checked.
struct RunContext {
  std::filesystem::path dir;
  Dataset raw;
  ModelSpec spec;
  std::optional<EquivalenceTable> equivalence;
  std::unique_ptr<DoseEffectModel> model;
  PosteriorDraws draws;
  std::optional<PosteriorDraws> placebo;
};

// Throws MissingRunDir or StaleManifest.
RunContext load_run(const std::filesystem::path& dir);

// Entry point shared by the executable and the tests.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace denma
