#include <json.hpp>

#include "gemft/gem.hpp"

namespace gemft {

StepDiagnostics gem_step(Encoder& model, const TagBatch& batch, std::span<const EpisodicMemory* const> memories,
                         Optimizer& optimizer, double margin, const std::function<void(const std::string&)>& warn) {
  StepDiagnostics d;
  GradientVector g;
  {
    Tape tape;
    const BoundModel b = model.bind(tape);
    const Var loss = tagging_loss(tape, model, b, batch);
    tape.backward(loss);
    d.task_loss = tape.value(loss).data[0];
    g = flatten_gradients(tape.parameter_gradients(), model.params());
  }

  GradientMatrix G;
  std::vector<int> row_owner;
  for (std::size_t k = 0; k < memories.size(); ++k) {
    LossAndGradient lg = memory_gradient(model, *memories[k]);
    d.memory_tasks.push_back(memories[k]->task());
    d.memory_losses.push_back(lg.loss);
    if (norm(lg.gradient) < 1e-12) {
      d.dropped.push_back(static_cast<int>(k));
      if (warn) warn("gem: dropping constraint '" + memories[k]->task() + "' with vanishing gradient");
      continue;
    }
    G.push_back(std::move(lg.gradient));
    row_owner.push_back(static_cast<int>(k));
  }

  const std::vector<int> violated = detect_violations(g, G, margin);
  if (violated.empty()) {
    d.projection.projected = g;
    d.projection.dual.assign(G.size(), 0.0);
  } else {
    d.projection = project_dual_qp(g, G);
    d.projection.violated = violated;
  }
  // report constraint indices in memory registration order
  for (int& k : d.projection.violated) k = row_owner[k];
  std::vector<double> dual(memories.size(), 0.0);
  for (std::size_t r = 0; r < row_owner.size(); ++r) dual[row_owner[r]] = d.projection.dual[r];
  d.projection.dual = std::move(dual);

  optimizer.step(model.params(), d.projection.projected);
  d.step = optimizer.steps();
  return d;
}

std::string to_json_line(const StepDiagnostics& d) {
  nlohmann::ordered_json j;
  j["step"] = d.step;
  j["task_loss"] = d.task_loss;
  nlohmann::ordered_json mem = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < d.memory_tasks.size(); ++k) mem[d.memory_tasks[k]] = d.memory_losses[k];
  j["memory_losses"] = mem;
  j["violated"] = d.projection.violated;
  j["dual"] = d.projection.dual;
  j["distance"] = d.projection.distance;
  j["sweeps"] = d.projection.sweeps;
  if (!d.dropped.empty()) j["dropped"] = d.dropped;
  return j.dump();
}

}  // namespace gemft
