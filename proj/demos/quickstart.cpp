// Trains a small detector on synthetic recordings, quantizes it and replays
// the validation set through the chip emulator.

#include <spikeforge/spikeforge.hpp>

#include <iostream>

using namespace spikeforge;

int main() {
  auto samples = desk_dataset(16, 32);
  const auto split = stratified_split(samples, 0.75, 7);
  std::vector<Sample> train_set, val_set;
  for (auto i : split.train) train_set.push_back(samples[i]);
  for (auto i : split.val) val_set.push_back(samples[i]);

  TrainConfig cfg = desk_train_config();
  cfg.epochs = 5;
  const auto result = train(desk_spec(32), train_set, val_set, cfg, {}, [](const EpochMetrics& em) {
    std::cout << "epoch " << em.epoch << "  loss " << em.loss_total << "  val mAP " << em.val_map << "\n";
  });

  const Model& model = result.best;
  const auto val = prepare_all(val_set, model.spec, cfg.window_us, cfg.representation());
  const auto chip = evaluate(model, val, EvalMode::emulator);
  std::cout << "emulator mAP " << chip.map << ", " << chip.spikes_per_s << " spikes/s";
  if (chip.power_mw) std::cout << ", " << *chip.power_mw << " mW";
  std::cout << "\n";

  const auto q = quantize(model.spec, model.body);
  const auto gap = gap_report(model.spec, model.body, q, val.front().stream, cfg.window_us);
  std::cout << to_json(gap).dump(2) << "\n";
}
