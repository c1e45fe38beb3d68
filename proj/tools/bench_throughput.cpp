// Measures training throughput (sequences per second) for a model size.
#include "compctl/corpus/dataset.hpp"
#include "compctl/training/trainer.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>

int main(int argc, char** argv) {
  using namespace compctl;
  const int d = argc > 1 ? std::atoi(argv[1]) : 128;
  const std::size_t chunk = argc > 2 ? std::strtoul(argv[2], nullptr, 10) : 256;
  const std::size_t n = 4096;
  model::ModelConfig mc = model::ModelConfig::small(0.5);
  mc.d_model = d;
  mc.d_ffn = 4 * d;
  auto data = corpus::build_datasets({n, 16, 16, 1, corpus::PairPolicy::kHoldOut},
                                     corpus::MappingTable::compositional());
  training::TrainConfig tc;
  tc.epochs = 1;
  tc.batch_size = 512;
  tc.chunk_size = chunk;
  tc.eval_cap = 16;
  const auto t0 = std::chrono::steady_clock::now();
  training::train_run(data, mc, tc);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("d_model=%d chunk=%zu: %.0f seq/s (%.2f s)\n", d, chunk, n / s, s);
}
