#include "denma/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <map>
#include <ostream>
#include <sstream>

#include "denma/diagnostics.hpp"
#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/kernels.hpp"
#include "denma/posterior.hpp"
#include "denma/simgen.hpp"
#include "denma/spline.hpp"

namespace denma {

namespace fs = std::filesystem;

namespace {

constexpr const char* kDataFile = "data.csv";
constexpr const char* kSpecFile = "spec.cfg";
constexpr const char* kEquivalenceFile = "equivalence.csv";
constexpr const char* kKnotsFile = "knots.csv";
constexpr const char* kDrawsFile = "draws.csv";
constexpr const char* kPlaceboFile = "placebo_draws.csv";
constexpr const char* kDiagnosticsFile = "diagnostics.txt";
constexpr const char* kObservationsFile = "observations.csv";
constexpr const char* kManifestFile = "manifest.txt";

// Placebo chains use their own seed so they never share a stream with the main fit.
constexpr std::uint64_t kPlaceboSeedOffset = 0x5bd1e995;

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> parse_percentiles(const std::string& text) {
  std::vector<double> out;
  for (const auto& part : io::split(text, ',')) {
    const auto v = io::parse_double(io::trim(part));
    if (!v) throw Error(ErrorCode::InvalidSpec, "knot percentile '" + part + "' is not a number");
    out.push_back(*v);
  }
  // Accept either fractions or percentages.
  if (std::any_of(out.begin(), out.end(), [](double p) { return p >= 1.0; })) {
    for (auto& p : out) p /= 100.0;
  }
  return out;
}

std::map<std::string, double> parse_dose_map(const std::string& text) {
  std::map<std::string, double> out;
  for (const auto& part : io::split(text, ',')) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidSpec, "expected agent=dose, got '" + part + "'");
    const auto v = io::parse_double(io::trim(std::string_view(part).substr(eq + 1)));
    if (!v) throw Error(ErrorCode::InvalidSpec, "dose in '" + part + "' is not a number");
    out[std::string(io::trim(std::string_view(part).substr(0, eq)))] = *v;
  }
  return out;
}

std::string parameter_table(const std::vector<ParameterSummary>& rows) {
  auto stat = [](const Statistic& s) { return s.degenerate ? std::string("NA") : io::format_double(s.value); };
  std::string out = "parameter,mean,sd,median,lo95,hi95,rhat,ess\n";
  for (const auto& r : rows) {
    out += r.name + "," + io::format_double(r.mean) + "," + io::format_double(r.sd) + "," +
           io::format_double(r.median) + "," + io::format_double(r.lo95) + "," + io::format_double(r.hi95) + "," +
           stat(r.rhat) + "," + stat(r.ess) + "\n";
  }
  return out;
}

std::string block_table(const PosteriorDraws& draws) {
  std::string out = "chain,block,proposed,accepted,rate,scale\n";
  for (std::size_t c = 0; c < draws.chains.size(); ++c) {
    for (const auto& b : draws.chains[c].blocks) {
      out += std::to_string(c + 1) + "," + b.name + "," + std::to_string(b.proposed) + "," +
             std::to_string(b.accepted) + "," + io::format_double(b.rate()) + "," + io::format_double(b.final_scale) +
             "\n";
    }
  }
  return out;
}

struct FitOptions {
  std::string data;
  std::string spec_path;
  std::string preset_name;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains, iterations, burn_in, thinning;
  std::string knot_percentiles;
  std::string covariate;
  std::string equivalence;
  std::string out;
};

int cmd_fit(const FitOptions& o, std::ostream& out, std::ostream& err) {
  const std::string data_text = io::read_file(o.data);
  const Dataset raw = parse_dataset(data_text);

  ModelSpec spec;
  if (!o.spec_path.empty()) {
    spec = parse_model_spec(io::read_file(o.spec_path));
  } else {
    spec = preset(o.preset_name.empty() ? "M1" : o.preset_name);
  }
  if (o.seed) spec.sampler.seed = *o.seed;
  if (o.chains) spec.sampler.chains = *o.chains;
  if (o.iterations) spec.sampler.iterations = *o.iterations;
  if (o.burn_in) spec.sampler.burn_in = *o.burn_in;
  if (o.thinning) spec.sampler.thinning = *o.thinning;
  if (!o.knot_percentiles.empty()) spec.knot_percentiles = parse_percentiles(o.knot_percentiles);
  if (!o.covariate.empty()) {
    if (o.covariate == "none") {
      spec.covariate.reset();
    } else if (spec.covariate) {
      spec.covariate->name = o.covariate;
    } else {
      spec.covariate = CovariateSpec{o.covariate};
    }
  }
  spec.validate();
  spec.sampler.validate();

  std::optional<std::string> equivalence_text;
  std::optional<EquivalenceTable> table;
  if (!o.equivalence.empty()) {
    equivalence_text = io::read_file(o.equivalence);
    table = parse_equivalence(*equivalence_text);
  }

  std::vector<std::string> warnings;
  Dataset data = prepare_dataset(raw, spec, table ? &*table : nullptr, &warnings);
  const auto report = validate_network(data);
  for (const auto& w : report.warnings) warnings.push_back(w);
  DoseEffectModel model(data, spec, std::nullopt, &warnings);

  const auto draws = run(model, spec.sampler);
  std::optional<PosteriorDraws> placebo;
  std::size_t placebo_arms = 0;
  for (const auto& s : data.studies) placebo_arms += s.has_placebo() ? 1 : 0;
  if (placebo_arms >= 2) {
    SamplerConfig pc = spec.sampler;
    pc.seed = spec.sampler.seed + kPlaceboSeedOffset;
    placebo = fit_placebo(data, pc, spec.priors);
  } else {
    warnings.push_back("fewer than 2 placebo arms; absolute curves and rankings are unavailable");
  }

  const auto fit = dic(draws, model);
  const auto summary = summarize(draws);

  const fs::path dir(o.out);
  fs::create_directories(dir);
  std::map<std::string, std::string> files;
  auto put = [&](const char* name, const std::string& content) {
    io::write_file(dir / name, content);
    files[name] = io::sha256_hex(content);
  };
  put(kDataFile, data_text);
  put(kSpecFile, emit_model_spec(spec));
  if (equivalence_text) put(kEquivalenceFile, *equivalence_text);
  put(kKnotsFile, emit_knots(model.knots()));
  put(kDrawsFile, emit_draws(draws));
  if (placebo) put(kPlaceboFile, emit_draws(*placebo));
  put(kObservationsFile, fit.observation_table(observation_labels(model)));

  std::ostringstream diag;
  diag << "# fit diagnostics\n";
  diag << "preset = " << (spec.preset.empty() ? "custom" : spec.preset) << "\n";
  diag << "chains = " << spec.sampler.chains << "\n";
  diag << "retained_per_chain = " << draws.rows_per_chain << "\n";
  diag << "parameters = " << draws.dimension() << "\n";
  double worst = 0.0;
  std::size_t flagged = 0;
  for (const auto& s : summary) {
    if (!s.rhat.degenerate) {
      worst = std::max(worst, s.rhat.value);
      if (s.rhat.value >= 1.05) ++flagged;
    }
  }
  diag << "max_rhat = " << io::format_double(worst) << "\n";
  diag << "rhat_above_1.05 = " << flagged << "\n";
  diag << fit.to_text();
  if (placebo) {
    const auto p0 = placebo_summary(*placebo);
    diag << "placebo_response = " << io::format_double(p0.median) << " (" << io::format_double(p0.lo95) << ", "
         << io::format_double(p0.hi95) << ")\n";
  }
  for (const auto& w : warnings) diag << "warning = " << w << "\n";
  diag << "\n[parameters]\n" << parameter_table(summary);
  diag << "\n[blocks]\n" << block_table(draws);
  put(kDiagnosticsFile, diag.str());

  io::KeyValues manifest;
  manifest.set("version", kVersion);
  manifest.set("created", utc_timestamp());
  manifest.set("seed", std::to_string(spec.sampler.seed));
  manifest.set("kernels", kernels::isa_name(kernels::active_isa()));
  manifest.set("clamped_predictors", std::to_string(kernels::clamp_events()));
  for (const auto& [name, hash] : files) manifest.set("sha256." + name, hash);
  io::write_file(dir / kManifestFile, manifest.to_string());

  for (const auto& w : warnings) err << "warning: " << w << "\n";
  out << "wrote " << dir.string() << " (" << draws.total_rows() << " draws, DIC " << io::format_double(fit.dic)
      << ", max R-hat " << io::format_double(worst) << ")\n";
  return kExitOk;
}

void emit(const std::string& path, const std::string& content, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << content;
  } else {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    io::write_file(p, content);
  }
}

}  // namespace

int exit_code(const Error& error) {
  switch (category(error.code())) {
    case ErrorCategory::Parse:
      return kExitParse;
    case ErrorCategory::Validation:
      return kExitValidation;
    case ErrorCategory::Sampling:
      return kExitSampling;
    case ErrorCategory::RunDir:
      return kExitRunDir;
  }
  return 1;
}

RunContext load_run(const fs::path& dir) {
  if (!fs::is_directory(dir) || !fs::exists(dir / kManifestFile)) {
    throw Error(ErrorCode::MissingRunDir, dir.string() + " is not a fit directory (no " + kManifestFile + ")");
  }
  const auto manifest = io::KeyValues::parse(io::read_file(dir / kManifestFile));
  std::map<std::string, std::string> contents;
  for (const auto& [key, hash] : manifest.entries()) {
    if (!key.starts_with("sha256.")) continue;
    const std::string name = key.substr(7);
    if (!fs::exists(dir / name)) throw Error(ErrorCode::StaleManifest, name + " is listed but missing");
    contents[name] = io::read_file(dir / name);
    if (io::sha256_hex(contents[name]) != io::trim(hash)) {
      throw Error(ErrorCode::StaleManifest, name + " changed since the fit was written");
    }
  }
  for (const char* required : {kDataFile, kSpecFile, kKnotsFile, kDrawsFile}) {
    if (!contents.contains(required)) throw Error(ErrorCode::StaleManifest, std::string(required) + " not recorded");
  }

  RunContext ctx;
  ctx.dir = dir;
  ctx.raw = parse_dataset(contents[kDataFile]);
  ctx.spec = parse_model_spec(contents[kSpecFile]);
  if (contents.contains(kEquivalenceFile)) ctx.equivalence = parse_equivalence(contents[kEquivalenceFile]);
  const Dataset data = prepare_dataset(ctx.raw, ctx.spec, ctx.equivalence ? &*ctx.equivalence : nullptr);
  ctx.model = std::make_unique<DoseEffectModel>(data, ctx.spec, parse_knots(contents[kKnotsFile]));
  ctx.draws = parse_draws(contents[kDrawsFile]);
  if (ctx.draws.names != ctx.model->layout().names) {
    throw Error(ErrorCode::StaleManifest, "draws do not match the model rebuilt from the run directory");
  }
  if (contents.contains(kPlaceboFile)) ctx.placebo = parse_draws(contents[kPlaceboFile]);
  return ctx;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Bayesian dose-effect network meta-analysis"};
  app.name("denma");
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  FitOptions fit;
  auto* fit_cmd = app.add_subcommand("fit", "Fit a model and write a run directory");
  fit_cmd->add_option("--data", fit.data, "Arm-level CSV")->required();
  auto* spec_opt = fit_cmd->add_option("--spec", fit.spec_path, "Model specification file");
  fit_cmd->add_option("--preset", fit.preset_name, "Named preset M1..M5")->excludes(spec_opt);
  fit_cmd->add_option("--seed", fit.seed);
  fit_cmd->add_option("--chains", fit.chains);
  fit_cmd->add_option("--iter", fit.iterations);
  fit_cmd->add_option("--burnin", fit.burn_in);
  fit_cmd->add_option("--thin", fit.thinning);
  fit_cmd->add_option("--knot-percentiles", fit.knot_percentiles, "e.g. 25,50,75 or 0.1,0.2,0.3");
  fit_cmd->add_option("--covariate", fit.covariate, "Covariate column (or none)");
  fit_cmd->add_option("--equivalence", fit.equivalence, "agent,factor[,class] CSV");
  fit_cmd->add_option("--out", fit.out, "Run directory")->required();

  std::string run_dir, agent, scale = "absolute", curve_out, grid_text;
  std::optional<double> covariate_value;
  bool allow_extrapolation = false;
  auto* curves_cmd = app.add_subcommand("curves", "Dose-response curves from a run");
  curves_cmd->add_option("--run", run_dir)->required();
  curves_cmd->add_option("--agent", agent, "Agent or class (default: all)");
  curves_cmd->add_option("--scale", scale)->check(CLI::IsMember({"absolute", "logor"}));
  curves_cmd->add_option("--covariate-value", covariate_value);
  curves_cmd->add_option("--grid", grid_text, "Comma-separated doses");
  curves_cmd->add_flag("--allow-extrapolation", allow_extrapolation);
  curves_cmd->add_option("--out", curve_out);

  std::string rank_doses, rank_equivalence, rank_out;
  std::optional<double> rank_dose;
  auto* rank_cmd = app.add_subcommand("rank", "Rank agents at given doses");
  rank_cmd->add_option("--run", run_dir)->required();
  rank_cmd->add_option("--dose", rank_dose, "One common-scale dose for every agent");
  rank_cmd->add_option("--doses", rank_doses, "agent=dose,...");
  rank_cmd->add_option("--equivalence", rank_equivalence);
  rank_cmd->add_option("--out", rank_out);

  std::string dic_out;
  auto* dic_cmd = app.add_subcommand("dic", "Model fit statistics of a run");
  dic_cmd->add_option("--run", run_dir)->required();
  dic_cmd->add_option("--out", dic_out, "Per-observation table");

  std::string scenario_path, sim_out;
  std::optional<std::uint64_t> sim_seed;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic dataset with known truth");
  sim_cmd->add_option("--scenario", scenario_path);
  sim_cmd->add_option("--seed", sim_seed);
  sim_cmd->add_option("--out", sim_out)->required();

  std::string validate_data, validate_equivalence;
  auto* validate_cmd = app.add_subcommand("validate", "Check a dataset and report the network");
  validate_cmd->add_option("--data", validate_data)->required();
  validate_cmd->add_option("--equivalence", validate_equivalence);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& e) {
    out << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitParse;
  }

  try {
    if (*fit_cmd) return cmd_fit(fit, out, err);

    if (*curves_cmd) {
      const auto ctx = load_run(run_dir);
      CurveOptions options;
      options.covariate = covariate_value;
      options.allow_extrapolation = allow_extrapolation;
      if (!grid_text.empty()) {
        std::vector<double> grid;
        for (const auto& part : io::split(grid_text, ',')) {
          const auto v = io::parse_double(io::trim(part));
          if (!v) throw Error(ErrorCode::InvalidSpec, "grid value '" + part + "' is not a number");
          grid.push_back(*v);
        }
        options.grid = grid;
      }
      std::vector<std::string> groups;
      if (!agent.empty()) {
        groups.push_back(agent);
      } else {
        for (const auto& a : ctx.model->dataset().agents) groups.push_back(a.id);
        if (ctx.spec.uses_classes()) {
          for (const auto& c : ctx.model->dataset().classes) groups.push_back(c);
        }
      }
      std::string text;
      for (std::size_t i = 0; i < groups.size(); ++i) {
        CurveEstimate curve;
        if (scale == "logor") {
          curve = log_or_curve(*ctx.model, ctx.draws, groups[i], options);
        } else {
          if (!ctx.placebo) throw Error(ErrorCode::TooFewPlaceboArms, "run has no placebo draws");
          curve = absolute_curve(*ctx.model, ctx.draws, *ctx.placebo, groups[i], options);
        }
        auto csv = emit_curve(curve);
        text += i == 0 ? csv : csv.substr(csv.find('\n') + 1);
      }
      emit(curve_out, text, out);
      return kExitOk;
    }

    if (*rank_cmd) {
      const auto ctx = load_run(run_dir);
      if (!ctx.placebo) throw Error(ErrorCode::TooFewPlaceboArms, "run has no placebo draws");
      std::map<std::string, double> doses;
      if (!rank_doses.empty()) {
        doses = parse_dose_map(rank_doses);
      } else if (rank_dose) {
        for (const auto& a : ctx.model->dataset().agents) doses[a.id] = *rank_dose;
      } else {
        throw Error(ErrorCode::InvalidSpec, "rank needs --dose or --doses");
      }
      std::optional<EquivalenceTable> table = ctx.equivalence;
      if (!rank_equivalence.empty()) table = parse_equivalence(io::read_file(rank_equivalence));
      const auto ranks = rank_agents(*ctx.model, ctx.draws, *ctx.placebo, doses, table ? &*table : nullptr);
      emit(rank_out, ranks.to_csv(), out);
      return kExitOk;
    }

    if (*dic_cmd) {
      const auto ctx = load_run(run_dir);
      const auto summary = dic(ctx.draws, *ctx.model);
      out << summary.to_text();
      if (!dic_out.empty()) emit(dic_out, summary.observation_table(observation_labels(*ctx.model)), out);
      return kExitOk;
    }

    if (*sim_cmd) {
      Scenario sc = scenario_path.empty() ? default_scenario() : parse_scenario(io::read_file(scenario_path));
      if (sim_seed) sc.seed = *sim_seed;
      const auto sim = generate(sc);
      const fs::path dir(sim_out);
      fs::create_directories(dir);
      io::write_file(dir / "data.csv", emit_dataset(sim.dataset));
      io::write_file(dir / "truth.txt", emit_truth(sim.truth));
      io::write_file(dir / "scenario.cfg", emit_scenario(sc));
      if (sim.equivalence) io::write_file(dir / "equivalence.csv", emit_equivalence(*sim.equivalence));
      out << "wrote " << dir.string() << " (" << sim.dataset.studies.size() << " studies, "
          << sim.dataset.arm_count() << " arms)\n";
      return kExitOk;
    }

    if (*validate_cmd) {
      Dataset data = load_dataset(validate_data);
      if (!validate_equivalence.empty()) {
        data = attach_classes(data, parse_equivalence(io::read_file(validate_equivalence)));
      }
      out << validate_network(data).to_text();
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitParse;
  }
  return 1;
}

}  // namespace denma
