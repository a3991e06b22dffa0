// Trains (or reloads) the benchmark classifier and checks its held-out
// accuracy. Usage: benchmark_fixture <cache dir>

#include <cstdio>
#include <exception>
#include <iostream>

#include "benchmark.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: benchmark_fixture <cache dir>\n";
    return 2;
  }
  try {
    const advtag::ClassifierModel m = advtag::bench::model(argv[1]);
    const double acc = advtag::accuracy(m, advtag::bench::heldout_set());
    std::printf("held-out accuracy %.4f (threshold %.2f)\n", acc, advtag::bench::kMinAccuracy);
    return acc >= advtag::bench::kMinAccuracy ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
