#include "denma/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <set>

#include "denma/error.hpp"
#include "denma/io.hpp"

namespace denma {

bool Study::has_placebo() const {
  return std::any_of(arms.begin(), arms.end(), [](const StudyArm& a) { return is_placebo(a.agent); });
}

std::optional<double> EquivalenceTable::factor(std::string_view agent) const {
  if (is_placebo(agent)) return 1.0;
  auto it = factors.find(std::string(agent));
  if (it == factors.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Dataset::agent_index(std::string_view agent) const {
  for (std::size_t k = 0; k < agents.size(); ++k) {
    if (agents[k].id == agent) return k;
  }
  return std::nullopt;
}

std::optional<std::size_t> Dataset::class_index(std::string_view class_id) const {
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (classes[c] == class_id) return c;
  }
  return std::nullopt;
}

std::size_t Dataset::arm_count() const {
  std::size_t total = 0;
  for (const auto& s : studies) total += s.arms.size();
  return total;
}

namespace {

std::string normalize_agent(std::string_view raw) {
  std::string lower(raw);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == kPlacebo) return std::string(kPlacebo);
  return std::string(raw);
}

std::string row_label(std::size_t row, const std::string& study) {
  return "row " + std::to_string(row) + " (study " + study + ")";
}

std::string quote_if_needed(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

Dataset parse_dataset(std::string_view csv_text) {
  const auto table = io::parse_csv(csv_text);
  const std::vector<std::string> required = {"study_id", "agent", "dose", "events", "n"};
  std::vector<std::size_t> cols;
  for (const auto& name : required) {
    auto col = table.column(name);
    if (!col) throw Error(ErrorCode::MissingColumn, "required column '" + name + "' not found");
    cols.push_back(*col);
  }
  std::vector<std::pair<std::string, std::size_t>> covariate_cols;
  for (std::size_t c = 0; c < table.header.size(); ++c) {
    if (std::find(cols.begin(), cols.end(), c) == cols.end()) {
      covariate_cols.emplace_back(table.header[c], c);
    }
  }

  Dataset data;
  for (const auto& [name, col] : covariate_cols) data.covariate_columns.push_back(name);
  std::map<std::string, std::size_t> study_slot;
  std::set<std::string> agents;

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& fields = table.rows[r];
    const std::size_t row = r + 1;
    const std::string study_id = fields[cols[0]];
    if (study_id.empty()) throw Error(ErrorCode::ParseFailure, "row " + std::to_string(row) + ": empty study_id");

    StudyArm arm;
    arm.row = row;
    arm.agent = normalize_agent(fields[cols[1]]);
    if (arm.agent.empty()) throw Error(ErrorCode::ParseFailure, row_label(row, study_id) + ": empty agent");

    auto dose = io::parse_double(fields[cols[2]]);
    if (!dose || !std::isfinite(*dose)) {
      throw Error(ErrorCode::NonNumericDose, row_label(row, study_id) + ": dose '" + fields[cols[2]] + "'");
    }
    auto events = io::parse_integer(fields[cols[3]]);
    auto n = io::parse_integer(fields[cols[4]]);
    if (!events || !n) {
      throw Error(ErrorCode::NonNumericValue, row_label(row, study_id) + ": events and n must be integers");
    }
    arm.dose = arm.original_dose = *dose;
    arm.events = *events;
    arm.sample_size = *n;
    if (arm.sample_size <= 0 || arm.events < 0) {
      throw Error(ErrorCode::InvalidArm, row_label(row, study_id) + ": need n > 0 and events >= 0");
    }
    if (arm.events > arm.sample_size) {
      throw Error(ErrorCode::EventsExceedN, row_label(row, study_id) + ": events " + std::to_string(arm.events) +
                                                " exceed n " + std::to_string(arm.sample_size));
    }
    if (arm.dose < 0.0) throw Error(ErrorCode::InvalidArm, row_label(row, study_id) + ": negative dose");
    if (is_placebo(arm.agent) != (arm.dose == 0.0)) {
      throw Error(ErrorCode::InvalidArm,
                  row_label(row, study_id) + ": dose must be 0 exactly for placebo and positive otherwise");
    }

    auto [it, inserted] = study_slot.try_emplace(study_id, data.studies.size());
    if (inserted) data.studies.push_back(Study{study_id, {}, {}});
    Study& study = data.studies[it->second];
    for (const auto& other : study.arms) {
      if (other.agent == arm.agent && other.dose == arm.dose) {
        throw Error(ErrorCode::DuplicateArm, row_label(row, study_id) + ": arm " + arm.agent + " at dose " +
                                                 io::format_double(arm.dose) + " repeats row " +
                                                 std::to_string(other.row));
      }
    }
    for (const auto& [name, col] : covariate_cols) {
      const auto& cell = fields[col];
      if (cell.empty()) continue;
      auto value = io::parse_double(cell);
      if (!value) {
        throw Error(ErrorCode::NonNumericValue, row_label(row, study_id) + ": covariate " + name + " = '" + cell + "'");
      }
      auto [cit, fresh] = study.covariates.try_emplace(name, *value);
      if (!fresh && cit->second != *value) {
        throw Error(ErrorCode::ParseFailure,
                    row_label(row, study_id) + ": covariate " + name + " differs between arms of one study");
      }
    }
    if (!is_placebo(arm.agent)) agents.insert(arm.agent);
    study.arms.push_back(std::move(arm));
  }

  for (const auto& study : data.studies) {
    if (study.arms.size() < 2) {
      throw Error(ErrorCode::InvalidArm, "study " + study.id + " has fewer than two arms");
    }
  }
  for (const auto& a : agents) data.agents.push_back(AgentInfo{a, {}, 1.0});
  return data;
}

Dataset load_dataset(const std::filesystem::path& path) { return parse_dataset(io::read_file(path)); }

std::string emit_dataset(const Dataset& dataset) {
  std::string out = "study_id,agent,dose,events,n";
  for (const auto& name : dataset.covariate_columns) out += "," + quote_if_needed(name);
  out += '\n';
  for (const auto& study : dataset.studies) {
    for (const auto& arm : study.arms) {
      out += quote_if_needed(study.id) + "," + quote_if_needed(arm.agent) + "," +
             io::format_double(arm.original_dose) + "," + std::to_string(arm.events) + "," +
             std::to_string(arm.sample_size);
      for (const auto& name : dataset.covariate_columns) {
        out += ',';
        auto it = study.covariates.find(name);
        if (it != study.covariates.end()) out += io::format_double(it->second);
      }
      out += '\n';
    }
  }
  return out;
}

EquivalenceTable parse_equivalence(std::string_view csv_text) {
  const auto table = io::parse_csv(csv_text);
  auto agent_col = table.column("agent");
  auto factor_col = table.column("factor");
  if (!agent_col) throw Error(ErrorCode::MissingColumn, "equivalence table needs an 'agent' column");
  if (!factor_col) throw Error(ErrorCode::MissingColumn, "equivalence table needs a 'factor' column");
  auto class_col = table.column("class");

  EquivalenceTable out;
  bool has_reference = false;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& fields = table.rows[r];
    const std::string agent = normalize_agent(fields[*agent_col]);
    auto factor = io::parse_double(fields[*factor_col]);
    if (!factor || !(*factor > 0.0) || !std::isfinite(*factor)) {
      throw Error(ErrorCode::NonNumericValue,
                  "equivalence row " + std::to_string(r + 1) + ": factor must be a positive number");
    }
    if (is_placebo(agent)) continue;
    if (!out.factors.emplace(agent, *factor).second) {
      throw Error(ErrorCode::DuplicateArm, "equivalence table lists " + agent + " twice");
    }
    if (*factor == 1.0) has_reference = true;
    if (class_col && !fields[*class_col].empty()) out.classes.emplace(agent, fields[*class_col]);
  }
  if (!out.factors.empty() && !has_reference) {
    throw Error(ErrorCode::ParseFailure, "equivalence table has no reference agent with factor 1");
  }
  return out;
}

EquivalenceTable load_equivalence(const std::filesystem::path& path) {
  return parse_equivalence(io::read_file(path));
}

std::string emit_equivalence(const EquivalenceTable& table) {
  std::string out = table.has_classes() ? "agent,factor,class\n" : "agent,factor\n";
  for (const auto& [agent, factor] : table.factors) {
    out += quote_if_needed(agent) + "," + io::format_double(factor);
    if (table.has_classes()) {
      auto it = table.classes.find(agent);
      out += ",";
      if (it != table.classes.end()) out += quote_if_needed(it->second);
    }
    out += '\n';
  }
  return out;
}

std::string NetworkReport::to_text() const {
  std::string out = "components = " + std::to_string(components.size()) + "\n";
  for (std::size_t c = 0; c < components.size(); ++c) {
    out += "component." + std::to_string(c + 1) + " =";
    for (std::size_t i = 0; i < components[c].size(); ++i) out += (i ? ", " : " ") + components[c][i];
    out += '\n';
  }
  for (const auto& d : dose_counts) {
    out += "distinct_doses." + d.agent + " = " + std::to_string(d.distinct_doses) + "\n";
  }
  for (const auto& f : flags) out += "flag = " + f + "\n";
  for (const auto& w : warnings) out += "warning = " + w + "\n";
  return out;
}

NetworkReport validate_network(const Dataset& dataset) {
  NetworkReport report;
  std::vector<std::string> nodes;
  nodes.emplace_back(kPlacebo);
  for (const auto& a : dataset.agents) nodes.push_back(a.id);
  // Placebo participates only if some arm uses it.
  bool placebo_used = false;
  for (const auto& s : dataset.studies) placebo_used = placebo_used || s.has_placebo();

  auto node_of = [&](const std::string& agent) -> std::size_t {
    if (is_placebo(agent)) return 0;
    return *dataset.agent_index(agent) + 1;
  };
  std::vector<std::size_t> parent(nodes.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& s : dataset.studies) {
    const std::size_t first = find(node_of(s.arms.front().agent));
    for (const auto& arm : s.arms) {
      const std::size_t other = find(node_of(arm.agent));
      if (other != first) parent[std::max(other, first)] = std::min(other, first);
    }
  }
  std::map<std::size_t, std::vector<std::string>> groups;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (i == 0 && !placebo_used) continue;
    groups[find(i)].push_back(nodes[i]);
  }
  for (auto& [root, members] : groups) report.components.push_back(std::move(members));

  for (const auto& agent : dataset.agents) {
    std::set<double> doses;
    for (const auto& s : dataset.studies) {
      for (const auto& arm : s.arms) {
        if (arm.agent == agent.id) doses.insert(arm.dose);
      }
    }
    report.dose_counts.push_back({agent.id, doses.size()});
    if (doses.size() < 2) {
      report.flags.push_back(agent.id + ": " + std::to_string(doses.size()) +
                             " distinct dose, dose-effect spline underdetermined");
    } else if (doses.size() == 2) {
      report.warnings.push_back(agent.id + ": only 2 distinct doses, spline shape weakly identified");
    }
  }
  if (!report.connected()) {
    report.warnings.push_back("network has " + std::to_string(report.components.size()) +
                              " disconnected components");
  }
  return report;
}

std::size_t select_reference_arm(const Study& study, const EquivalenceTable* table) {
  for (std::size_t a = 0; a < study.arms.size(); ++a) {
    if (is_placebo(study.arms[a].agent)) return a;
  }
  auto scaled = [&](const StudyArm& arm) {
    if (!table) return arm.dose;
    auto f = table->factor(arm.agent);
    return f ? arm.dose * *f : arm.dose;
  };
  std::size_t best = 0;
  for (std::size_t a = 1; a < study.arms.size(); ++a) {
    const double lhs = scaled(study.arms[a]);
    const double rhs = scaled(study.arms[best]);
    if (lhs < rhs || (lhs == rhs && study.arms[a].agent < study.arms[best].agent)) best = a;
  }
  return best;
}

Dataset attach_classes(const Dataset& dataset, const EquivalenceTable& table) {
  Dataset out = dataset;
  std::set<std::string> classes;
  for (auto& agent : out.agents) {
    auto f = table.factor(agent.id);
    if (!f) throw Error(ErrorCode::MissingEquivalence, agent.id);
    agent.factor = *f;
    if (table.has_classes()) {
      auto it = table.classes.find(agent.id);
      if (it == table.classes.end()) {
        throw Error(ErrorCode::MissingEquivalence, agent.id + " (no class assigned)");
      }
      agent.class_id = it->second;
      classes.insert(it->second);
    }
  }
  out.classes.assign(classes.begin(), classes.end());
  return out;
}

Dataset harmonize_doses(const Dataset& dataset, const EquivalenceTable& table) {
  if (dataset.harmonized) return dataset;
  Dataset out = attach_classes(dataset, table);
  for (auto& study : out.studies) {
    for (auto& arm : study.arms) {
      if (is_placebo(arm.agent)) continue;
      arm.dose = arm.original_dose * *table.factor(arm.agent);
    }
  }
  out.harmonized = true;
  return out;
}

std::vector<double> center_covariate(const Dataset& dataset, const std::string& name, double center) {
  std::vector<double> out;
  out.reserve(dataset.studies.size());
  for (const auto& study : dataset.studies) {
    auto it = study.covariates.find(name);
    if (it == study.covariates.end()) {
      throw Error(ErrorCode::MissingCovariate, "study " + study.id + " has no value for '" + name + "'");
    }
    out.push_back(it->second - center);
  }
  return out;
}

double log_or_variance(long long events_a, long long n_a, long long events_b, long long n_b) {
  double cells[4] = {static_cast<double>(events_a), static_cast<double>(n_a - events_a),
                     static_cast<double>(events_b), static_cast<double>(n_b - events_b)};
  const bool zero = std::any_of(std::begin(cells), std::end(cells), [](double c) { return c == 0.0; });
  double total = 0.0;
  for (double c : cells) total += 1.0 / (zero ? c + 0.5 : c);
  return total;
}

Dataset with_var_logor(const Dataset& dataset, const EquivalenceTable* table) {
  const std::string name(kVarLogOr);
  if (std::find(dataset.covariate_columns.begin(), dataset.covariate_columns.end(), name) !=
      dataset.covariate_columns.end()) {
    return dataset;
  }
  Dataset out = dataset;
  out.covariate_columns.push_back(name);
  for (auto& study : out.studies) {
    const std::size_t ref = select_reference_arm(study, table);
    std::optional<std::size_t> top;
    for (std::size_t a = 0; a < study.arms.size(); ++a) {
      if (a == ref) continue;
      if (!top) {
        top = a;
        continue;
      }
      const auto& cand = study.arms[a];
      const auto& cur = study.arms[*top];
      if (cand.dose > cur.dose || (cand.dose == cur.dose && cand.sample_size > cur.sample_size)) top = a;
    }
    const auto& r = study.arms[ref];
    const auto& t = study.arms[*top];
    study.covariates[name] = log_or_variance(r.events, r.sample_size, t.events, t.sample_size);
  }
  return out;
}

}  // namespace denma
