#include "cantante/optimizer.hpp"

#include <algorithm>
#include <numeric>

#include "cantante/resources.hpp"

namespace cantante {

namespace {

std::string replace_all(std::string text, std::string_view key, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(key, pos)) != std::string::npos) {
    text.replace(pos, key.size(), value);
    pos += value.size();
  }
  return text;
}

std::string join_list(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) {
    if (!out.empty()) out += ", ";
    out += s;
  }
  return out;
}

ChatRequest meta_request(std::string text) {
  ChatRequest request;
  request.category = CallCategory::Optimizer;
  request.messages.push_back({MessageRole::User, std::move(text)});
  return request;
}

}  // namespace

MetaPrompts MetaPrompts::builtin() {
  return MetaPrompts{std::string(resources::k_prompt_generation),
                     std::string(resources::k_crossover),
                     std::string(resources::k_mutation)};
}

std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::Evolutionary: return "evolutionary";
    case OptimizerKind::Paraphrase: return "paraphrase";
  }
  return "evolutionary";
}

OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "evolutionary") return OptimizerKind::Evolutionary;
  if (s == "paraphrase") return OptimizerKind::Paraphrase;
  throw std::invalid_argument("unknown optimizer kind: " + std::string(s));
}

EvolutionaryPromptOptimizer::EvolutionaryPromptOptimizer(AgentSpec spec,
                                                         ChatBackend& meta_backend,
                                                         MetaPrompts prompts,
                                                         EvoOptions options)
    : spec_(std::move(spec)),
      meta_backend_(meta_backend),
      prompts_(std::move(prompts)),
      options_(options) {}

const ScoredParameterization& EvolutionaryPromptOptimizer::best_of(
    const OptimizerState& state) const {
  const ScoredParameterization* best = &state.population.front();
  for (const auto& sp : state.population) {
    const double a = sp.fitness.value_or(-2.0);
    const double b = best->fitness.value_or(-2.0);
    if (a > b) best = &sp;
  }
  return *best;
}

std::size_t EvolutionaryPromptOptimizer::sample_rank_weighted(
    OptimizerState& state, std::optional<std::size_t> exclude) {
  // rank weights: worst candidate weighs 1, best weighs P (ties resolved by
  // index for determinism); unset fitness counts as equal
  const std::size_t n = state.population.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return state.population[a].fitness.value_or(0.0) <
           state.population[b].fitness.value_or(0.0);
  });
  std::vector<std::size_t> weight(n, 0);
  for (std::size_t pos = 0; pos < n; ++pos) {
    weight[order[pos]] = pos + 1;
  }
  std::uint64_t total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    total += weight[i];
  }
  std::uint64_t draw = state.rng_stream.next_below(total);
  for (std::size_t i = 0; i < n; ++i) {
    if (exclude && *exclude == i) continue;
    if (draw < weight[i]) return i;
    draw -= weight[i];
  }
  return n - 1;
}

std::pair<std::size_t, std::size_t> EvolutionaryPromptOptimizer::sample_two_parents(
    OptimizerState& state) {
  const std::size_t first = sample_rank_weighted(state, std::nullopt);
  if (state.population.size() < 2) return {first, first};
  const std::size_t second = sample_rank_weighted(state, first);
  return {first, second};
}

Parameterization EvolutionaryPromptOptimizer::run_meta_step(
    const std::string& instruction_filled, const Parameterization& fallback,
    PromptOrigin origin, const std::string& lineage) {
  for (int attempt = 0; attempt < options_.regeneration_attempts; ++attempt) {
    ChatResponse response;
    try {
      ++stats_.meta_calls;
      response = complete_with_retries(meta_backend_, meta_request(instruction_filled),
                                       options_.transport_retry.retries,
                                       options_.transport_retry.base_delay_ms);
    } catch (const BackendError&) {
      break;  // meta model unreachable: fall back
    }
    Parameterization candidate;
    candidate.prompt_template = extract_output(response.text, "prompt");
    candidate.origin = origin;
    candidate.lineage_id = lineage;
    if (candidate.prompt_template != kExtractionFailureMarker &&
        validate_parameterization(spec_, candidate).empty()) {
      if (attempt > 0) stats_.regenerations += attempt;
      return candidate;
    }
  }
  ++stats_.fallbacks;
  Parameterization copy = fallback;
  copy.lineage_id = lineage + "-fallback";
  return copy;
}

std::vector<Parameterization> EvolutionaryPromptOptimizer::suggest(OptimizerState& state) {
  if (state.population.empty()) {
    throw OptimizerError("optimizer state for '" + state.agent_id + "' is uninitialized");
  }
  stats_ = SuggestStats{};
  std::vector<Parameterization> out;
  for (const auto& sp : state.population) out.push_back(sp.param);

  for (int j = 0; j < options_.offspring; ++j) {
    const std::string lineage =
        state.agent_id + "-g" + std::to_string(state.generation) + "-o" + std::to_string(j + 1);
    const auto [pa, pb] = sample_two_parents(state);
    const Parameterization& parent_a = state.population[pa].param;
    const Parameterization& parent_b = state.population[pb].param;
    const Parameterization& better_parent =
        state.population[pa].fitness.value_or(0.0) >=
                state.population[pb].fitness.value_or(0.0)
            ? parent_a
            : parent_b;

    std::string crossover_text =
        replace_all(prompts_.crossover, "{parent_a}", parent_a.prompt_template);
    crossover_text = replace_all(std::move(crossover_text), "{parent_b}",
                                 parent_b.prompt_template);
    crossover_text = replace_all(std::move(crossover_text), "{output_tag}", spec_.output_tag);
    Parameterization child =
        run_meta_step(crossover_text, better_parent, PromptOrigin::Crossover, lineage);

    std::string mutation_text =
        replace_all(prompts_.mutation, "{candidate}", child.prompt_template);
    mutation_text = replace_all(std::move(mutation_text), "{output_tag}", spec_.output_tag);
    child = run_meta_step(mutation_text, child, PromptOrigin::Mutated, lineage);

    out.push_back(std::move(child));
  }

  state.last_suggestion = out;
  return out;
}

std::vector<Parameterization> ParaphraseOptimizer::suggest(OptimizerState& state) {
  if (state.population.empty()) {
    throw OptimizerError("optimizer state for '" + state.agent_id + "' is uninitialized");
  }
  stats_ = SuggestStats{};
  std::vector<Parameterization> out;
  for (const auto& sp : state.population) out.push_back(sp.param);

  for (int j = 0; j < options_.offspring; ++j) {
    const std::string lineage =
        state.agent_id + "-g" + std::to_string(state.generation) + "-p" + std::to_string(j + 1);
    const std::size_t pi = sample_rank_weighted(state, std::nullopt);
    const Parameterization& parent = state.population[pi].param;

    std::string mutation_text =
        replace_all(prompts_.mutation, "{candidate}", parent.prompt_template);
    mutation_text = replace_all(std::move(mutation_text), "{output_tag}", spec_.output_tag);
    out.push_back(run_meta_step(mutation_text, parent, PromptOrigin::Mutated, lineage));
  }

  state.last_suggestion = out;
  return out;
}

void EvolutionaryPromptOptimizer::update(
    OptimizerState& state, const std::vector<std::pair<Parameterization, double>>& pairs) {
  if (pairs.size() != state.last_suggestion.size() || pairs.empty()) {
    throw OptimizerError("update for '" + state.agent_id + "' got " +
                         std::to_string(pairs.size()) + " pairs, expected " +
                         std::to_string(state.last_suggestion.size()));
  }
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pairs[i].first.prompt_template != state.last_suggestion[i].prompt_template) {
      throw OptimizerError("update pair " + std::to_string(i + 1) + " for '" +
                           state.agent_id + "' does not match the last suggestion");
    }
  }

  // top population_size by fitness, ties broken by lower candidate index;
  // survivors keep their candidate order, so equal fitness means no churn
  const std::size_t pop_size = state.population.size();
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pairs[a].second > pairs[b].second;
  });
  order.resize(std::min(pop_size, order.size()));
  std::sort(order.begin(), order.end());

  std::vector<ScoredParameterization> next;
  for (std::size_t idx : order) {
    next.push_back(ScoredParameterization{pairs[idx].first, pairs[idx].second});
  }
  state.population = std::move(next);
  state.last_suggestion.clear();
  ++state.generation;
}

std::unique_ptr<LocalOptimizer> make_optimizer(OptimizerKind kind, AgentSpec spec,
                                               ChatBackend& meta_backend,
                                               MetaPrompts prompts, EvoOptions options) {
  switch (kind) {
    case OptimizerKind::Evolutionary:
      return std::make_unique<EvolutionaryPromptOptimizer>(std::move(spec), meta_backend,
                                                           std::move(prompts), options);
    case OptimizerKind::Paraphrase:
      return std::make_unique<ParaphraseOptimizer>(std::move(spec), meta_backend,
                                                   std::move(prompts), options);
  }
  throw std::invalid_argument("unknown optimizer kind");
}

std::vector<Parameterization> generate_initial_prompts(const AgentSpec& agent, int n,
                                                       ChatBackend& meta_backend,
                                                       const MetaPrompts& prompts,
                                                       int regeneration_attempts,
                                                       RetryPolicy transport_retry) {
  if (n < 1) throw std::invalid_argument("generate_initial_prompts: n must be >= 1");
  std::vector<Parameterization> out;
  for (int slot = 1; slot <= n; ++slot) {
    std::string text = replace_all(prompts.generation, "{agent_id}", agent.agent_id);
    text = replace_all(std::move(text), "{task_description}", agent.task_description);
    text = replace_all(std::move(text), "{input_variables}",
                       join_list(agent.input_variables));
    text = replace_all(std::move(text), "{output_tag}", agent.output_tag);
    text = replace_all(std::move(text), "{variation}", std::to_string(slot));

    bool produced = false;
    for (int attempt = 0; attempt < regeneration_attempts && !produced; ++attempt) {
      const ChatResponse response = complete_with_retries(
          meta_backend, meta_request(text), transport_retry.retries,
          transport_retry.base_delay_ms);
      Parameterization candidate;
      candidate.prompt_template = extract_output(response.text, "prompt");
      candidate.origin = PromptOrigin::Initial;
      candidate.lineage_id = agent.agent_id + "-init" + std::to_string(slot);
      if (candidate.prompt_template != kExtractionFailureMarker &&
          validate_parameterization(agent, candidate).empty()) {
        out.push_back(std::move(candidate));
        produced = true;
      }
    }
    if (!produced) {
      throw OptimizerError("initial prompt generation for agent '" + agent.agent_id +
                           "' kept violating the template interface after " +
                           std::to_string(regeneration_attempts) + " attempts");
    }
  }
  return out;
}

}  // namespace cantante
