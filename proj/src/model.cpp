#include "denma/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "denma/error.hpp"
#include "denma/io.hpp"
#include "denma/kernels.hpp"

namespace denma {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);

double normal_logpdf(double x, double mean, double sd) {
  if (!(sd > 0.0)) return kNegInf;
  const double z = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * z * z;
}

double normal_logpdf(double x, const NormalPrior& prior) {
  return normal_logpdf(x, prior.mean, std::sqrt(prior.variance));
}

double uniform_logpdf(double x, double upper) {
  return (x >= 0.0 && x <= upper) ? -std::log(upper) : kNegInf;
}

double empirical_logit(double events, double trials) {
  const double p = (events + 0.5) / (trials + 1.0);
  return std::log(p / (1.0 - p));
}

double empirical_logit_variance(double events, double trials) {
  return 1.0 / (events + 0.5) + 1.0 / (trials - events + 0.5);
}

// Active agents of a study in order of first appearance.
std::vector<std::size_t> study_agents(const Dataset& data, const Study& study) {
  std::vector<std::size_t> out;
  for (const auto& arm : study.arms) {
    if (is_placebo(arm.agent)) continue;
    const std::size_t k = *data.agent_index(arm.agent);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(k);
  }
  return out;
}

std::string knot_group(const ModelSpec& spec, const AgentInfo& agent) {
  if (spec.uses_classes()) return agent.class_id;
  if (spec.shape_across_agents == AgentShape::Common) return "all";
  return agent.id;
}

std::size_t interaction_width(const ModelSpec& spec) {
  if (!spec.covariate) return 0;
  return spec.covariate->form == InteractionForm::Linear ? 1 : spec.shape_dimension();
}

}  // namespace

std::optional<std::size_t> ParameterLayout::find(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return i;
  }
  return std::nullopt;
}

std::vector<std::size_t> reference_arms(const Dataset& dataset) {
  EquivalenceTable table;
  bool scaled = false;
  if (!dataset.harmonized) {
    for (const auto& a : dataset.agents) {
      table.factors[a.id] = a.factor;
      scaled = scaled || a.factor != 1.0;
    }
  }
  std::vector<std::size_t> out;
  for (const auto& s : dataset.studies) out.push_back(select_reference_arm(s, scaled ? &table : nullptr));
  return out;
}

Dataset prepare_dataset(const Dataset& raw, const ModelSpec& spec, const EquivalenceTable* table,
                        std::vector<std::string>* warnings) {
  spec.validate();
  Dataset data = raw;
  if (spec.requires_harmonization()) {
    if (!table) {
      throw Error(ErrorCode::MissingEquivalence,
                  "assumption " + to_string(spec.shape_across_agents) + " needs an equivalence table");
    }
    if (spec.uses_classes() && !table->has_classes()) {
      throw Error(ErrorCode::SpecDatasetMismatch, "class assumptions need a class column in the equivalence table");
    }
    data = harmonize_doses(data, *table);
  } else if (table) {
    data = attach_classes(data, *table);
  }
  if (spec.covariate && spec.covariate->name == kVarLogOr) {
    data = with_var_logor(data);
  }
  const auto report = validate_network(data);
  if (!report.connected()) {
    const bool pooled = spec.shape_across_agents == AgentShape::Exchangeable ||
                        spec.shape_across_agents == AgentShape::Common;
    if (!pooled) {
      throw Error(ErrorCode::DisconnectedNetwork,
                  std::to_string(report.components.size()) +
                      " components; only exchangeable or common shapes across agents can bridge them");
    }
    if (warnings) warnings->push_back("network is disconnected; relying on pooled shapes across agents");
  }
  return data;
}

ParameterLayout parameter_layout(const ModelSpec& spec, const Dataset& data) {
  spec.validate();
  const std::size_t P = spec.shape_dimension();
  const std::size_t M = interaction_width(spec);
  const std::size_t K = data.agents.size();
  const std::size_t C = data.classes.size();
  if (spec.uses_classes() && C == 0) {
    throw Error(ErrorCode::SpecDatasetMismatch, "class assumption without a class map");
  }
  if (spec.requires_harmonization() && !data.harmonized) {
    throw Error(ErrorCode::SpecDatasetMismatch, "assumption requires harmonized doses");
  }
  const auto refs = reference_arms(data);

  ParameterLayout L;
  auto add = [&L](std::string name) {
    L.names.push_back(std::move(name));
    return L.names.size() - 1;
  };
  auto idx = [](std::size_t i) { return std::to_string(i + 1); };

  for (const auto& s : data.studies) L.u.push_back(add("u[" + s.id + "]"));

  L.delta.resize(data.studies.size());
  for (std::size_t i = 0; i < data.studies.size(); ++i) {
    const auto& s = data.studies[i];
    L.delta[i].assign(s.arms.size(), kAbsent);
    if (spec.delta != DeltaAssumption::Exchangeable) continue;
    for (std::size_t a = 0; a < s.arms.size(); ++a) {
      if (a == refs[i]) continue;
      L.delta[i][a] = add("delta[" + s.id + ":" + s.arms[a].agent + "@" + io::format_double(s.arms[a].dose) + "]");
    }
  }

  L.beta.resize(data.studies.size());
  if (spec.shape_across_studies == StudyShape::Exchangeable) {
    for (std::size_t i = 0; i < data.studies.size(); ++i) {
      for (std::size_t k : study_agents(data, data.studies[i])) {
        for (std::size_t p = 0; p < P; ++p) {
          L.beta[i].push_back(add("beta[" + data.studies[i].id + ":" + data.agents[k].id + ":" + idx(p) + "]"));
        }
      }
    }
  }

  L.B.assign(K * P, kAbsent);
  const auto agents_mode = spec.shape_across_agents;
  if (agents_mode == AgentShape::Independent || agents_mode == AgentShape::Exchangeable ||
      agents_mode == AgentShape::ClassExchangeable) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t p = 0; p < P; ++p) L.B[k * P + p] = add("B[" + data.agents[k].id + ":" + idx(p) + "]");
    }
  }
  if (agents_mode == AgentShape::Exchangeable || agents_mode == AgentShape::Common) {
    for (std::size_t p = 0; p < P; ++p) L.b.push_back(add("b[" + idx(p) + "]"));
  } else if (spec.uses_classes()) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t p = 0; p < P; ++p) L.b.push_back(add("b[" + data.classes[c] + ":" + idx(p) + "]"));
    }
  }

  if (spec.delta == DeltaAssumption::Exchangeable) L.tau = add("tau");
  if (spec.shape_across_studies == StudyShape::Exchangeable) {
    if (spec.shared_sigma_beta) {
      L.sigma_beta.push_back(add("sigma_beta"));
    } else {
      for (std::size_t p = 0; p < P; ++p) L.sigma_beta.push_back(add("sigma_beta[" + idx(p) + "]"));
    }
  }
  if (agents_mode == AgentShape::Exchangeable || agents_mode == AgentShape::ClassExchangeable) {
    for (std::size_t p = 0; p < P; ++p) L.sigma_B.push_back(add("sigma_B[" + idx(p) + "]"));
  }

  L.gamma.resize(data.studies.size());
  if (spec.covariate) {
    const auto& cov = *spec.covariate;
    if (cov.across_studies == StudyShape::Exchangeable) {
      for (std::size_t i = 0; i < data.studies.size(); ++i) {
        for (std::size_t k : study_agents(data, data.studies[i])) {
          for (std::size_t m = 0; m < M; ++m) {
            L.gamma[i].push_back(add("gamma[" + data.studies[i].id + ":" + data.agents[k].id + ":" + idx(m) + "]"));
          }
        }
      }
    }
    if (cov.across_agents != InteractionPooling::Common) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t m = 0; m < M; ++m) L.Gamma.push_back(add("Gamma[" + data.agents[k].id + ":" + idx(m) + "]"));
      }
    }
    if (cov.across_agents != InteractionPooling::Independent) {
      for (std::size_t m = 0; m < M; ++m) L.g.push_back(add("g[" + idx(m) + "]"));
    }
    if (cov.across_studies == StudyShape::Exchangeable) L.tau_gamma = add("tau_gamma");
    if (cov.across_agents == InteractionPooling::Exchangeable) L.tau_Gamma = add("tau_Gamma");
  }
  return L;
}

DoseEffectModel::DoseEffectModel(Dataset data, ModelSpec spec, std::optional<std::map<std::string, KnotSet>> knots,
                                 std::vector<std::string>* warnings)
    : data_(std::move(data)), spec_(std::move(spec)) {
  spec_.validate();
  P_ = spec_.shape_dimension();
  M_ = interaction_width(spec_);
  layout_ = parameter_layout(spec_, data_);

  std::map<std::string, std::vector<double>> group_doses;
  for (const auto& agent : data_.agents) {
    group_of_[agent.id] = knot_group(spec_, agent);
    group_doses[group_of_[agent.id]];
  }
  for (const auto& study : data_.studies) {
    for (const auto& arm : study.arms) {
      if (!is_placebo(arm.agent)) group_doses[group_of_[arm.agent]].push_back(arm.dose);
    }
  }
  if (knots) {
    for (const auto& [group, doses] : group_doses) {
      auto it = knots->find(group);
      if (it == knots->end()) throw Error(ErrorCode::MissingKnots, group);
      if (it->second.knots.size() != P_ + 1) {
        throw Error(ErrorCode::InvalidSpec, "knot set for " + group + " does not match the knot count of the spec");
      }
      knots_[group] = it->second;
      knots_[group].group = group;
    }
  } else {
    for (const auto& [group, doses] : group_doses) {
      knots_[group] = place_knots(doses, spec_.knot_percentiles, group, warnings);
    }
  }
  design_ = build_design(data_, knots_, group_of_);
  build_structure();
  build_blocks();
}

void DoseEffectModel::build_structure() {
  const auto refs = reference_arms(data_);
  const std::size_t K = data_.agents.size();
  studies_of_agent_.assign(K, {});
  agent_max_dose_.assign(K, 0.0);
  basis_scale_.assign(K * P_, 0.0);

  if (spec_.covariate) {
    z_ = center_covariate(data_, spec_.covariate->name, spec_.covariate->center);
  } else {
    z_.assign(data_.studies.size(), 0.0);
  }

  for (std::size_t i = 0; i < data_.studies.size(); ++i) {
    const auto& study = data_.studies[i];
    StudyInfo info;
    info.first = arms_.size();
    info.count = study.arms.size();
    info.ref = info.first + refs[i];
    info.agents = study_agents(data_, study);
    for (std::size_t k : info.agents) studies_of_agent_[k].push_back(i);
    for (std::size_t a = 0; a < study.arms.size(); ++a) {
      const auto& arm = study.arms[a];
      ArmInfo ai;
      ai.study = i;
      ai.reference = (a == refs[i]);
      if (!is_placebo(arm.agent)) {
        ai.agent = *data_.agent_index(arm.agent);
        ai.slot = static_cast<std::size_t>(std::find(info.agents.begin(), info.agents.end(), ai.agent) -
                                           info.agents.begin());
        agent_max_dose_[ai.agent] = std::max(agent_max_dose_[ai.agent], arm.dose);
        const auto basis = design_.arm(arms_.size());
        for (std::size_t p = 0; p < P_; ++p) {
          basis_scale_[ai.agent * P_ + p] = std::max(basis_scale_[ai.agent * P_ + p], std::fabs(basis[p]));
        }
      }
      arms_.push_back(ai);
      events_.push_back(static_cast<double>(arm.events));
      trials_.push_back(static_cast<double>(arm.sample_size));
      lchoose_.push_back(std::lgamma(static_cast<double>(arm.sample_size) + 1.0) -
                         std::lgamma(static_cast<double>(arm.events) + 1.0) -
                         std::lgamma(static_cast<double>(arm.sample_size - arm.events) + 1.0));
      for (std::size_t m = 0; m < M_; ++m) {
        interaction_design_.push_back(ai.agent == kAbsent ? 0.0
                                      : spec_.covariate->form == InteractionForm::Linear
                                          ? arm.dose
                                          : design_.arm(arms_.size() - 1)[m]);
      }
    }
    studies_.push_back(std::move(info));
  }
}

void DoseEffectModel::build_blocks() {
  const std::size_t ns = studies_.size();
  const std::size_t K = data_.agents.size();
  const std::size_t global = ns;
  const bool exch_delta = spec_.delta == DeltaAssumption::Exchangeable;
  const bool exch_beta = spec_.shape_across_studies == StudyShape::Exchangeable;
  const bool shift_moves = exch_delta && !exch_beta;

  std::vector<std::size_t> all_terms(ns + 1);
  for (std::size_t t = 0; t <= ns; ++t) all_terms[t] = t;
  std::vector<std::size_t> all_delta_arms;
  for (std::size_t a = 0; a < arms_.size(); ++a) {
    if (exch_delta && !arms_[a].reference) all_delta_arms.push_back(a);
  }

  auto delta_index = [&](std::size_t flat) {
    const auto& st = studies_[arms_[flat].study];
    return layout_.delta[arms_[flat].study][flat - st.first];
  };
  auto terms_for = [&](const std::set<std::size_t>& studies) {
    std::vector<std::size_t> t(studies.begin(), studies.end());
    t.push_back(global);
    return t;
  };
  auto arms_in = [&](const std::set<std::size_t>& studies) {
    std::vector<std::size_t> out;
    for (std::size_t i : studies) {
      for (std::size_t a = studies_[i].first; a < studies_[i].first + studies_[i].count; ++a) {
        if (exch_delta && !arms_[a].reference) out.push_back(a);
      }
    }
    return out;
  };
  auto add_block = [&](BlockSpec block, Coupling coupling = Coupling::None, std::vector<std::size_t> arms = {}) {
    if (coupling != Coupling::None) {
      for (std::size_t a : arms) block.dependents.push_back(delta_index(a));
      if (block.dependents.empty()) return;
    }
    blocks_.push_back(std::move(block));
    coupling_.push_back(coupling);
    coupled_arms_.push_back(std::move(arms));
  };
  auto positive_block = [&](const std::string& name, std::size_t index, double upper,
                            std::vector<std::size_t> terms) {
    BlockSpec b;
    b.name = name;
    b.indices = {index};
    b.terms = std::move(terms);
    b.move = MoveKind::LogRandomWalk;
    b.upper = upper;
    b.initial_scales = {0.3};
    return b;
  };
  auto shape_scale = [&](std::size_t agent, std::size_t p) {
    const double s = basis_scale_[agent * P_ + p];
    return s > 0.0 ? 0.05 / s : 0.05;
  };
  auto pooled_scale = [&](const std::vector<std::size_t>& agents, std::size_t p) {
    double s = 0.0;
    for (std::size_t k : agents) s = std::max(s, basis_scale_[k * P_ + p]);
    return s > 0.0 ? 0.05 / s : 0.05;
  };
  double interaction_magnitude = 0.0;
  for (std::size_t a = 0; a < arms_.size(); ++a) {
    for (std::size_t m = 0; m < M_; ++m) {
      interaction_magnitude =
          std::max(interaction_magnitude, std::fabs(z_[arms_[a].study] * interaction_design_[a * M_ + m]));
    }
  }
  const double interaction_step = interaction_magnitude > 0.0 ? 0.05 / interaction_magnitude : 0.05;

  // Per-study blocks: baseline with its relative effects, then study-level shapes and interactions.
  for (std::size_t i = 0; i < ns; ++i) {
    const auto& st = studies_[i];
    BlockSpec b;
    b.name = "study[" + data_.studies[i].id + "]";
    b.terms = {i};
    const double ref_var = empirical_logit_variance(events_[st.ref], trials_[st.ref]);
    b.indices.push_back(layout_.u[i]);
    b.initial_scales.push_back(std::sqrt(ref_var));
    for (std::size_t a = st.first; a < st.first + st.count; ++a) {
      const std::size_t d = layout_.delta[i][a - st.first];
      if (d == kAbsent) continue;
      b.indices.push_back(d);
      b.initial_scales.push_back(std::sqrt(ref_var + empirical_logit_variance(events_[a], trials_[a])));
    }
    add_block(std::move(b));

    if (!layout_.beta[i].empty()) {
      BlockSpec bb;
      bb.name = "beta[" + data_.studies[i].id + "]";
      bb.terms = {i};
      bb.indices = layout_.beta[i];
      for (std::size_t slot = 0; slot < st.agents.size(); ++slot) {
        for (std::size_t p = 0; p < P_; ++p) bb.initial_scales.push_back(shape_scale(st.agents[slot], p));
      }
      add_block(std::move(bb));
    }
    if (!layout_.gamma[i].empty()) {
      BlockSpec gb;
      gb.name = "gamma[" + data_.studies[i].id + "]";
      gb.terms = {i};
      gb.indices = layout_.gamma[i];
      gb.initial_scales.assign(gb.indices.size(), interaction_step);
      add_block(std::move(gb));
    }
  }

  // Agent-level shapes.
  for (std::size_t k = 0; k < K; ++k) {
    if (layout_.B.empty() || layout_.B[k * P_] == kAbsent) break;
    const std::set<std::size_t> studies(studies_of_agent_[k].begin(), studies_of_agent_[k].end());
    BlockSpec b;
    b.name = "B[" + data_.agents[k].id + "]";
    b.terms = terms_for(studies);
    for (std::size_t p = 0; p < P_; ++p) {
      b.indices.push_back(layout_.B[k * P_ + p]);
      b.initial_scales.push_back(shape_scale(k, p));
    }
    if (shift_moves) {
      BlockSpec shifted = b;
      shifted.name += "~shift";
      add_block(std::move(b));
      add_block(std::move(shifted), Coupling::Shift, arms_in(studies));
    } else {
      add_block(std::move(b));
    }
  }

  // Pooled shapes.
  const auto mode = spec_.shape_across_agents;
  if (mode == AgentShape::Exchangeable || mode == AgentShape::Common) {
    std::vector<std::size_t> agents(K);
    for (std::size_t k = 0; k < K; ++k) agents[k] = k;
    BlockSpec b;
    b.name = "b";
    b.indices = layout_.b;
    for (std::size_t p = 0; p < P_; ++p) b.initial_scales.push_back(pooled_scale(agents, p));
    if (mode == AgentShape::Exchangeable) {
      b.terms = {global};
      add_block(std::move(b));
    } else {
      b.terms = all_terms;
      if (shift_moves) {
        BlockSpec shifted = b;
        shifted.name += "~shift";
        add_block(std::move(b));
        add_block(std::move(shifted), Coupling::Shift, all_delta_arms);
      } else {
        add_block(std::move(b));
      }
    }
  } else if (spec_.uses_classes()) {
    for (std::size_t c = 0; c < data_.classes.size(); ++c) {
      std::vector<std::size_t> members;
      std::set<std::size_t> studies;
      for (std::size_t k = 0; k < K; ++k) {
        if (data_.agents[k].class_id != data_.classes[c]) continue;
        members.push_back(k);
        studies.insert(studies_of_agent_[k].begin(), studies_of_agent_[k].end());
      }
      BlockSpec b;
      b.name = "b[" + data_.classes[c] + "]";
      for (std::size_t p = 0; p < P_; ++p) {
        b.indices.push_back(layout_.b[c * P_ + p]);
        b.initial_scales.push_back(pooled_scale(members, p));
      }
      if (mode == AgentShape::ClassExchangeable) {
        b.terms = {global};
        add_block(std::move(b));
      } else {
        b.terms = terms_for(studies);
        if (shift_moves) {
          BlockSpec shifted = b;
          shifted.name += "~shift";
          add_block(std::move(b));
          add_block(std::move(shifted), Coupling::Shift, arms_in(studies));
        } else {
          add_block(std::move(b));
        }
      }
    }
  }

  // Heterogeneities.
  if (layout_.tau != kAbsent) {
    add_block(positive_block("tau", layout_.tau, spec_.priors.tau_upper, all_terms));
    BlockSpec scaled = positive_block("tau~scale", layout_.tau, spec_.priors.tau_upper, all_terms);
    add_block(std::move(scaled), Coupling::Scale, all_delta_arms);
  }
  for (std::size_t j = 0; j < layout_.sigma_beta.size(); ++j) {
    add_block(positive_block(layout_.names[layout_.sigma_beta[j]], layout_.sigma_beta[j],
                             spec_.priors.sigma_beta_upper, all_terms));
  }
  for (std::size_t j = 0; j < layout_.sigma_B.size(); ++j) {
    add_block(positive_block(layout_.names[layout_.sigma_B[j]], layout_.sigma_B[j], spec_.priors.sigma_B_upper,
                             {global}));
  }

  // Interaction terms.
  if (spec_.covariate) {
    const auto& cov = *spec_.covariate;
    const bool exch_gamma = cov.across_studies == StudyShape::Exchangeable;
    if (!layout_.Gamma.empty()) {
      for (std::size_t k = 0; k < K; ++k) {
        const std::set<std::size_t> studies(studies_of_agent_[k].begin(), studies_of_agent_[k].end());
        BlockSpec b;
        b.name = "Gamma[" + data_.agents[k].id + "]";
        b.terms = terms_for(studies);
        for (std::size_t m = 0; m < M_; ++m) b.indices.push_back(layout_.Gamma[k * M_ + m]);
        b.initial_scales.assign(M_, interaction_step);
        add_block(std::move(b));
      }
    }
    if (!layout_.g.empty()) {
      BlockSpec b;
      b.name = "g";
      b.indices = layout_.g;
      b.initial_scales.assign(M_, interaction_step);
      b.terms = cov.across_agents == InteractionPooling::Common ? all_terms : std::vector<std::size_t>{global};
      add_block(std::move(b));
    }
    // The interaction is nearly collinear with the linear shape term when the
    // covariate varies little, so also move them together.
    BlockSpec joint;
    joint.name = "shape+interaction";
    joint.terms = all_terms;
    if (!layout_.B.empty() && layout_.B.front() != kAbsent) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t p = 0; p < P_; ++p) {
          joint.indices.push_back(layout_.B[k * P_ + p]);
          joint.initial_scales.push_back(shape_scale(k, p));
        }
      }
    } else {
      std::vector<std::size_t> agents(K);
      for (std::size_t k = 0; k < K; ++k) agents[k] = k;
      for (std::size_t j = 0; j < layout_.b.size(); ++j) {
        joint.indices.push_back(layout_.b[j]);
        joint.initial_scales.push_back(pooled_scale(agents, j % P_));
      }
    }
    for (std::size_t idx : layout_.Gamma) {
      joint.indices.push_back(idx);
      joint.initial_scales.push_back(interaction_step);
    }
    if (cov.across_agents == InteractionPooling::Common) {
      for (std::size_t idx : layout_.g) {
        joint.indices.push_back(idx);
        joint.initial_scales.push_back(interaction_step);
      }
    }
    if (!exch_beta && !joint.indices.empty()) {
      if (shift_moves) {
        add_block(std::move(joint), Coupling::Shift, all_delta_arms);
      } else {
        add_block(std::move(joint));
      }
    }
    if (exch_gamma) {
      add_block(positive_block("tau_gamma", layout_.tau_gamma, spec_.priors.tau_gamma_upper, all_terms));
    }
    if (layout_.tau_Gamma != kAbsent) {
      add_block(positive_block("tau_Gamma", layout_.tau_Gamma, spec_.priors.tau_Gamma_upper, {global}));
    }
  }
}

double DoseEffectModel::agent_coef(std::span<const double> s, std::size_t agent, std::size_t p) const {
  switch (spec_.shape_across_agents) {
    case AgentShape::Independent:
    case AgentShape::Exchangeable:
    case AgentShape::ClassExchangeable:
      return s[layout_.B[agent * P_ + p]];
    case AgentShape::Common:
      return s[layout_.b[p]];
    case AgentShape::ClassCommon:
      return s[layout_.b[*data_.class_index(data_.agents[agent].class_id) * P_ + p]];
  }
  return 0.0;
}

double DoseEffectModel::shape_coef(std::span<const double> s, std::size_t study, std::size_t slot,
                                   std::size_t p) const {
  if (spec_.shape_across_studies == StudyShape::Exchangeable) return s[layout_.beta[study][slot * P_ + p]];
  return agent_coef(s, studies_[study].agents[slot], p);
}

double DoseEffectModel::agent_icoef(std::span<const double> s, std::size_t agent, std::size_t m) const {
  if (spec_.covariate->across_agents == InteractionPooling::Common) return s[layout_.g[m]];
  return s[layout_.Gamma[agent * M_ + m]];
}

double DoseEffectModel::interaction_coef(std::span<const double> s, std::size_t study, std::size_t slot,
                                         std::size_t m) const {
  if (spec_.covariate->across_studies == StudyShape::Exchangeable) return s[layout_.gamma[study][slot * M_ + m]];
  return agent_icoef(s, studies_[study].agents[slot], m);
}

double DoseEffectModel::arm_effect(std::span<const double> s, std::size_t flat) const {
  const auto& arm = arms_[flat];
  if (arm.agent == kAbsent) return 0.0;
  const double* basis = design_.values.data() + flat * P_;
  double total = 0.0;
  for (std::size_t p = 0; p < P_; ++p) total += shape_coef(s, arm.study, arm.slot, p) * basis[p];
  return total;
}

double DoseEffectModel::arm_interaction(std::span<const double> s, std::size_t flat) const {
  const auto& arm = arms_[flat];
  if (arm.agent == kAbsent || M_ == 0) return 0.0;
  const double* basis = interaction_design_.data() + flat * M_;
  double total = 0.0;
  for (std::size_t m = 0; m < M_; ++m) total += interaction_coef(s, arm.study, arm.slot, m) * basis[m];
  return total;
}

double DoseEffectModel::flat_delta_mean(std::span<const double> s, std::size_t flat) const {
  const auto& st = studies_[arms_[flat].study];
  return arm_effect(s, flat) - arm_effect(s, st.ref);
}

double DoseEffectModel::flat_predictor(std::span<const double> s, std::size_t flat) const {
  const std::size_t i = arms_[flat].study;
  const auto& st = studies_[i];
  const double u = s[layout_.u[i]];
  if (flat == st.ref) return u;
  double effect = spec_.delta == DeltaAssumption::Exchangeable ? s[layout_.delta[i][flat - st.first]]
                                                                : flat_delta_mean(s, flat);
  if (M_ > 0) effect += z_[i] * (arm_interaction(s, flat) - arm_interaction(s, st.ref));
  return u + effect;
}

double DoseEffectModel::linear_predictor(std::span<const double> state, std::size_t study, std::size_t arm) const {
  if (state.size() != layout_.size()) throw Error(ErrorCode::DimensionMismatch, "state size does not match layout");
  if (study >= studies_.size() || arm >= studies_[study].count) {
    throw Error(ErrorCode::DimensionMismatch, "arm index out of range");
  }
  return flat_predictor(state, studies_[study].first + arm);
}

void DoseEffectModel::linear_predictors(std::span<const double> state, std::span<double> out) const {
  if (state.size() != layout_.size() || out.size() != arms_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "state or output size does not match the model");
  }
  for (std::size_t a = 0; a < arms_.size(); ++a) out[a] = flat_predictor(state, a);
}

double DoseEffectModel::delta_mean(std::span<const double> state, std::size_t study, std::size_t arm) const {
  if (state.size() != layout_.size()) throw Error(ErrorCode::DimensionMismatch, "state size does not match layout");
  return flat_delta_mean(state, studies_[study].first + arm);
}

double DoseEffectModel::study_likelihood(std::span<const double> s, std::size_t i) const {
  const auto& st = studies_[i];
  thread_local std::vector<double> eta;
  eta.resize(st.count);
  double constant = 0.0;
  for (std::size_t a = 0; a < st.count; ++a) {
    eta[a] = flat_predictor(s, st.first + a);
    if (!std::isfinite(eta[a])) return kNegInf;
    constant += lchoose_[st.first + a];
  }
  return constant + kernels::binomial_kernel_sum(std::span<const double>(events_).subspan(st.first, st.count),
                                                 std::span<const double>(trials_).subspan(st.first, st.count),
                                                 eta);
}

double DoseEffectModel::study_prior(std::span<const double> s, std::size_t i) const {
  const auto& st = studies_[i];
  double lp = normal_logpdf(s[layout_.u[i]], spec_.priors.baseline);

  if (spec_.delta == DeltaAssumption::Exchangeable) {
    // Compound-symmetric normal: variance tau^2, covariance tau^2 / 2.
    const double tau = s[layout_.tau];
    if (!(tau > 0.0)) return kNegInf;
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t m = 0;
    for (std::size_t a = st.first; a < st.first + st.count; ++a) {
      if (a == st.ref) continue;
      const double e = s[layout_.delta[i][a - st.first]] - flat_delta_mean(s, a);
      sum += e;
      sum_sq += e * e;
      ++m;
    }
    const double md = static_cast<double>(m);
    const double half_var = 0.5 * tau * tau;
    const double log_det = md * std::log(half_var) + std::log(md + 1.0);
    const double quad = (sum_sq - sum * sum / (md + 1.0)) / half_var;
    lp += -0.5 * (md * kLogTwoPi + log_det + quad);
  }

  if (spec_.shape_across_studies == StudyShape::Exchangeable) {
    for (std::size_t slot = 0; slot < st.agents.size(); ++slot) {
      for (std::size_t p = 0; p < P_; ++p) {
        const double sd = s[layout_.sigma_beta[spec_.shared_sigma_beta ? 0 : p]];
        lp += normal_logpdf(s[layout_.beta[i][slot * P_ + p]], agent_coef(s, st.agents[slot], p), sd);
      }
    }
  }
  if (M_ > 0 && spec_.covariate->across_studies == StudyShape::Exchangeable) {
    const double sd = s[layout_.tau_gamma];
    for (std::size_t slot = 0; slot < st.agents.size(); ++slot) {
      for (std::size_t m = 0; m < M_; ++m) {
        lp += normal_logpdf(s[layout_.gamma[i][slot * M_ + m]], agent_icoef(s, st.agents[slot], m), sd);
      }
    }
  }
  return lp;
}

double DoseEffectModel::global_prior(std::span<const double> s) const {
  const auto& pr = spec_.priors;
  const std::size_t K = data_.agents.size();
  double lp = 0.0;
  switch (spec_.shape_across_agents) {
    case AgentShape::Independent:
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t p = 0; p < P_; ++p) lp += normal_logpdf(s[layout_.B[k * P_ + p]], pr.shape);
      }
      break;
    case AgentShape::Exchangeable:
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t p = 0; p < P_; ++p) {
          lp += normal_logpdf(s[layout_.B[k * P_ + p]], s[layout_.b[p]], s[layout_.sigma_B[p]]);
        }
      }
      break;
    case AgentShape::ClassExchangeable:
      for (std::size_t k = 0; k < K; ++k) {
        const std::size_t c = *data_.class_index(data_.agents[k].class_id);
        for (std::size_t p = 0; p < P_; ++p) {
          lp += normal_logpdf(s[layout_.B[k * P_ + p]], s[layout_.b[c * P_ + p]], s[layout_.sigma_B[p]]);
        }
      }
      break;
    case AgentShape::Common:
    case AgentShape::ClassCommon:
      break;
  }
  for (std::size_t idx : layout_.b) lp += normal_logpdf(s[idx], pr.pooled_shape);
  if (layout_.tau != kAbsent) lp += uniform_logpdf(s[layout_.tau], pr.tau_upper);
  for (std::size_t idx : layout_.sigma_beta) lp += uniform_logpdf(s[idx], pr.sigma_beta_upper);
  for (std::size_t idx : layout_.sigma_B) lp += uniform_logpdf(s[idx], pr.sigma_B_upper);
  if (M_ > 0) {
    const auto pooling = spec_.covariate->across_agents;
    if (pooling == InteractionPooling::Independent) {
      for (std::size_t idx : layout_.Gamma) lp += normal_logpdf(s[idx], pr.interaction);
    } else if (pooling == InteractionPooling::Exchangeable) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t m = 0; m < M_; ++m) {
          lp += normal_logpdf(s[layout_.Gamma[k * M_ + m]], s[layout_.g[m]], s[layout_.tau_Gamma]);
        }
      }
    }
    for (std::size_t idx : layout_.g) lp += normal_logpdf(s[idx], pr.interaction);
    if (layout_.tau_gamma != kAbsent) lp += uniform_logpdf(s[layout_.tau_gamma], pr.tau_gamma_upper);
    if (layout_.tau_Gamma != kAbsent) lp += uniform_logpdf(s[layout_.tau_Gamma], pr.tau_Gamma_upper);
  }
  return lp;
}

double DoseEffectModel::term_log_density(std::span<const double> state, std::size_t term) const {
  double v;
  if (term == studies_.size()) {
    v = global_prior(state);
  } else {
    const double prior = study_prior(state, term);
    v = std::isfinite(prior) ? prior + study_likelihood(state, term) : prior;
  }
  return std::isnan(v) ? kNegInf : v;
}

double DoseEffectModel::log_likelihood(std::span<const double> state) const {
  if (state.size() != layout_.size()) throw Error(ErrorCode::DimensionMismatch, "state size does not match layout");
  double total = 0.0;
  for (std::size_t i = 0; i < studies_.size(); ++i) total += study_likelihood(state, i);
  return std::isnan(total) ? kNegInf : total;
}

double DoseEffectModel::log_prior(std::span<const double> state) const {
  if (state.size() != layout_.size()) throw Error(ErrorCode::DimensionMismatch, "state size does not match layout");
  double total = global_prior(state);
  for (std::size_t i = 0; i < studies_.size() && std::isfinite(total); ++i) total += study_prior(state, i);
  return std::isnan(total) ? kNegInf : total;
}

double DoseEffectModel::log_posterior(std::span<const double> state) const {
  const double prior = log_prior(state);
  if (!std::isfinite(prior)) return prior;
  return prior + log_likelihood(state);
}

double DoseEffectModel::couple(std::size_t block, std::span<const double> before, std::span<double> after) const {
  const auto& arms = coupled_arms_[block];
  if (coupling_[block] == Coupling::Shift) {
    for (std::size_t a : arms) {
      const std::size_t idx = layout_.delta[arms_[a].study][a - studies_[arms_[a].study].first];
      after[idx] = before[idx] + flat_delta_mean(after, a) - flat_delta_mean(before, a);
    }
    return 0.0;
  }
  if (coupling_[block] == Coupling::Scale) {
    const double ratio = after[layout_.tau] / before[layout_.tau];
    for (std::size_t a : arms) {
      const std::size_t idx = layout_.delta[arms_[a].study][a - studies_[arms_[a].study].first];
      const double mean = flat_delta_mean(before, a);
      after[idx] = mean + ratio * (before[idx] - mean);
    }
    return static_cast<double>(arms.size()) * std::log(ratio);
  }
  return 0.0;
}

std::vector<double> DoseEffectModel::initial_state(Rng& rng, std::size_t) const {
  std::vector<double> s(layout_.size(), 0.0);
  const std::size_t K = data_.agents.size();
  auto positive = [&](double upper) { return rng.uniform(0.05, std::min(0.5, 0.5 * upper)); };

  for (std::size_t i = 0; i < studies_.size(); ++i) {
    const auto& st = studies_[i];
    const double ref_logit = empirical_logit(events_[st.ref], trials_[st.ref]);
    s[layout_.u[i]] = ref_logit + rng.normal(0.0, 0.2);
    for (std::size_t a = st.first; a < st.first + st.count; ++a) {
      const std::size_t d = layout_.delta[i][a - st.first];
      if (d != kAbsent) s[d] = empirical_logit(events_[a], trials_[a]) - ref_logit + rng.normal(0.0, 0.2);
    }
  }
  auto jitter_shape = [&](std::size_t agent, std::size_t p) {
    const double scale = basis_scale_[agent * P_ + p];
    return rng.normal(0.0, scale > 0.0 ? 0.1 / scale : 0.1);
  };
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t p = 0; p < P_; ++p) {
      if (!layout_.B.empty() && layout_.B[k * P_ + p] != kAbsent) s[layout_.B[k * P_ + p]] = jitter_shape(k, p);
    }
  }
  for (std::size_t j = 0; j < layout_.b.size(); ++j) {
    const std::size_t p = j % P_;
    double scale = 0.0;
    for (std::size_t k = 0; k < K; ++k) scale = std::max(scale, basis_scale_[k * P_ + p]);
    s[layout_.b[j]] = rng.normal(0.0, scale > 0.0 ? 0.1 / scale : 0.1);
  }
  for (std::size_t i = 0; i < studies_.size(); ++i) {
    const auto& st = studies_[i];
    for (std::size_t slot = 0; slot < layout_.beta[i].size() / std::max<std::size_t>(P_, 1); ++slot) {
      for (std::size_t p = 0; p < P_; ++p) {
        s[layout_.beta[i][slot * P_ + p]] = agent_coef(s, st.agents[slot], p) + jitter_shape(st.agents[slot], p);
      }
    }
  }
  if (layout_.tau != kAbsent) s[layout_.tau] = positive(spec_.priors.tau_upper);
  for (std::size_t idx : layout_.sigma_beta) s[idx] = positive(spec_.priors.sigma_beta_upper);
  for (std::size_t idx : layout_.sigma_B) s[idx] = positive(spec_.priors.sigma_B_upper);
  if (M_ > 0) {
    double magnitude = 0.0;
    for (std::size_t a = 0; a < arms_.size(); ++a) {
      for (std::size_t m = 0; m < M_; ++m) {
        magnitude = std::max(magnitude, std::fabs(z_[arms_[a].study] * interaction_design_[a * M_ + m]));
      }
    }
    const double sd = magnitude > 0.0 ? 0.01 / magnitude : 0.01;
    for (std::size_t idx : layout_.g) s[idx] = rng.normal(0.0, sd);
    for (std::size_t idx : layout_.Gamma) s[idx] = rng.normal(0.0, sd);
    for (const auto& row : layout_.gamma) {
      for (std::size_t idx : row) s[idx] = rng.normal(0.0, sd);
    }
    if (layout_.tau_gamma != kAbsent) s[layout_.tau_gamma] = positive(spec_.priors.tau_gamma_upper);
    if (layout_.tau_Gamma != kAbsent) s[layout_.tau_Gamma] = positive(spec_.priors.tau_Gamma_upper);
  }
  return s;
}

std::vector<double> DoseEffectModel::agent_shape(std::span<const double> state, std::size_t agent) const {
  std::vector<double> out(P_);
  for (std::size_t p = 0; p < P_; ++p) out[p] = agent_coef(state, agent, p);
  return out;
}

std::vector<double> DoseEffectModel::class_shape(std::span<const double> state, std::size_t cls) const {
  if (!spec_.uses_classes()) throw Error(ErrorCode::UnknownAgent, "model has no class-level curves");
  std::vector<double> out(P_);
  for (std::size_t p = 0; p < P_; ++p) out[p] = state[layout_.b[cls * P_ + p]];
  return out;
}

std::vector<double> DoseEffectModel::agent_interaction(std::span<const double> state, std::size_t agent) const {
  std::vector<double> out(M_);
  for (std::size_t m = 0; m < M_; ++m) out[m] = agent_icoef(state, agent, m);
  return out;
}

const KnotSet& DoseEffectModel::agent_knots(std::size_t agent) const {
  return knots_.at(group_of_.at(data_.agents.at(agent).id));
}

const KnotSet& DoseEffectModel::class_knots(std::size_t cls) const {
  if (!spec_.uses_classes()) throw Error(ErrorCode::UnknownAgent, "model has no class-level curves");
  return knots_.at(data_.classes.at(cls));
}

double DoseEffectModel::class_max_dose(std::size_t cls) const {
  double out = 0.0;
  for (std::size_t k = 0; k < data_.agents.size(); ++k) {
    if (data_.agents[k].class_id == data_.classes.at(cls)) out = std::max(out, agent_max_dose_[k]);
  }
  return out;
}

std::vector<double> DoseEffectModel::interaction_basis(double x, std::size_t agent) const {
  if (M_ == 0) return {};
  if (spec_.covariate->form == InteractionForm::Linear) return {x};
  return rcs_basis(x, agent_knots(agent));
}

}  // namespace denma
