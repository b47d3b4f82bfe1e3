#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace denma {

// Reserved agent id. Placebo arms always carry dose 0.
inline constexpr std::string_view kPlacebo = "placebo";

inline bool is_placebo(std::string_view agent) { return agent == kPlacebo; }

struct StudyArm {
  std::string agent;
  double dose = 0.0;           // analysis scale (harmonized when an equivalence table was applied)
  double original_dose = 0.0;  // as read from the input
  long long events = 0;
  long long sample_size = 0;
  std::size_t row = 0;  // 1-based data row in the source file, 0 if synthetic

  // Provenance (row) is not part of an arm's identity.
  bool operator==(const StudyArm& o) const {
    return agent == o.agent && dose == o.dose && original_dose == o.original_dose && events == o.events &&
           sample_size == o.sample_size;
  }
};

struct Study {
  std::string id;
  std::vector<StudyArm> arms;
  std::map<std::string, double> covariates;

  bool has_placebo() const;
  bool operator==(const Study&) const = default;
};

struct AgentInfo {
  std::string id;
  std::string class_id;  // empty when no class map is loaded
  double factor = 1.0;   // native dose -> reference-equivalent dose

  bool operator==(const AgentInfo&) const = default;
};

// Multipliers converting each agent's native dose to the reference agent's scale.
// An optional class column doubles as the class map for class-effect models.
struct EquivalenceTable {
  std::map<std::string, double> factors;
  std::map<std::string, std::string> classes;

  std::optional<double> factor(std::string_view agent) const;
  bool has_classes() const { return !classes.empty(); }
};

struct Dataset {
  std::vector<Study> studies;
  std::vector<AgentInfo> agents;     // active agents, sorted by id
  std::vector<std::string> classes;  // sorted class ids, empty without a class map
  std::vector<std::string> covariate_columns;
  bool harmonized = false;

  std::optional<std::size_t> agent_index(std::string_view agent) const;
  std::optional<std::size_t> class_index(std::string_view class_id) const;
  std::size_t arm_count() const;

  bool operator==(const Dataset&) const = default;
};

// Required columns: study_id, agent, dose, events, n. Any other column is a
// study-level covariate; an empty cell marks it missing for that study.
Dataset parse_dataset(std::string_view csv_text);
Dataset load_dataset(const std::filesystem::path& path);

// Inverse of parse_dataset for the native-dose view of a dataset.
std::string emit_dataset(const Dataset& dataset);

// Two or three columns: agent, factor[, class].
EquivalenceTable parse_equivalence(std::string_view csv_text);
EquivalenceTable load_equivalence(const std::filesystem::path& path);
std::string emit_equivalence(const EquivalenceTable& table);

struct AgentDoseSummary {
  std::string agent;
  std::size_t distinct_doses = 0;
};

struct NetworkReport {
  std::vector<std::vector<std::string>> components;  // treatment nodes, placebo included
  std::vector<AgentDoseSummary> dose_counts;
  std::vector<std::string> flags;
  std::vector<std::string> warnings;

  bool connected() const { return components.size() <= 1; }
  std::string to_text() const;
};

NetworkReport validate_network(const Dataset& dataset);

// Placebo if present, otherwise the minimum-dose arm (equivalence scale when a
// table is given). Ties go to the smallest agent id, then file order.
std::size_t select_reference_arm(const Study& study, const EquivalenceTable* table = nullptr);

// Multiplies every active dose by its agent factor and attaches the class map.
Dataset harmonize_doses(const Dataset& dataset, const EquivalenceTable& table);

// Attaches classes and factors without touching doses.
Dataset attach_classes(const Dataset& dataset, const EquivalenceTable& table);

std::vector<double> center_covariate(const Dataset& dataset, const std::string& name, double center);

// Variance of the log odds ratio between the reference arm and the highest-dose
// other arm, with 0.5 added to every cell when any cell is zero.
double log_or_variance(long long events_a, long long n_a, long long events_b, long long n_b);

inline constexpr std::string_view kVarLogOr = "var_logor";

// Adds the var_logor covariate to every study unless the input supplied that column.
Dataset with_var_logor(const Dataset& dataset, const EquivalenceTable* table = nullptr);

}  // namespace denma
