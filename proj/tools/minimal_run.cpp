// Trains a small model through the library API (no config files) and
// prints its phase. Usage: minimal_run [init_rate] [epochs]

#include "compctl/analysis/evaluation.hpp"
#include "compctl/analysis/phase.hpp"
#include "compctl/corpus/dataset.hpp"
#include "compctl/numerics/linalg.hpp"
#include "compctl/training/trainer.hpp"

#include <cstdio>
#include <cstdlib>

using namespace compctl;

int main(int argc, char** argv) {
  const double gamma = argc > 1 ? std::atof(argv[1]) : 0.8;
  const int epochs = argc > 2 ? std::atoi(argv[2]) : 12;

  model::ModelConfig mc = model::ModelConfig::small(gamma);
  mc.d_model = 64;
  mc.d_ffn = 256;

  training::TrainConfig tc;
  tc.epochs = epochs;
  tc.warmup_epochs = 2;
  tc.cosine_epochs = epochs - 2;
  tc.batch_size = 256;
  tc.chunk_size = 64;
  tc.eval_every = epochs;
  tc.eval_cap = 2000;

  const auto table = corpus::MappingTable::compositional();
  const auto data = corpus::build_datasets(
      {20000, 2000, 2000, training::data_seed(tc.master_seed), corpus::PairPolicy::kHoldOut}, table);

  training::RunOptions opt;
  opt.on_epoch = [](const training::TrainEpoch& e, const training::EpochRecord*) {
    std::printf("epoch %d  loss %.4f  acc %.3f\n", e.epoch, e.train_loss, e.train_acc);
  };
  const auto run = training::train_run(data, mc, tc, opt);

  const double id = analysis::accuracy(run.params, data.id_test);
  const double ood = analysis::accuracy(run.params, data.ood_test);
  const double com = analysis::commutativity_probability(run.params, data.ood_test);
  const auto phase = analysis::classify_phase(id, ood, com);
  std::printf("gamma %.2f: ID %.3f  OOD %.3f  commutativity %.3f  -> phase %d %s, W_Q stable rank %.2f\n", gamma, id,
              ood, com, phase.phase, phase.flag_name().c_str(), stable_rank(run.params.layers[0].w_q));
}
