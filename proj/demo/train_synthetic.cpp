// Trains the network on an in-memory synthetic set and prints per-epoch
// metrics. Usage: train_synthetic [epochs] [per_class]

#include <cstdlib>
#include <iostream>

#include "amplinet/amplinet.hpp"

int main(int argc, char** argv) {
  using namespace amplinet;
  const std::size_t epochs = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 10;
  const std::size_t per_class = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 10;

  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 8;
  cfg.schedule.initial = 0.001;
  cfg.preprocess.target_len = 500;

  std::vector<LabeledInput> train_set;
  std::vector<LabeledInput> test_set;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    for (std::size_t i = 0; i < per_class; ++i) {
      const auto rec = generate_synthetic(static_cast<ClassCode>(c), 100 + i, 10.0, 500.0);
      auto& dst = (i % 5 == 4) ? test_set : train_set;
      dst.push_back({make_input(rec, cfg.preprocess), c});
    }
  }

  std::cout << "epoch\tlr\ttrain_loss\ttest_acc\ttest_macro_f1\ttest_micro_auc\n";
  const auto result = train(train_set, test_set, cfg, [](const EpochStats& s) { std::cout << history_tsv({s}); });
  std::cout << "\ntrain accuracy " << evaluate(result.params, train_set).accuracy << "\n\n"
            << evaluate(result.params, test_set).to_text();
  return 0;
}
