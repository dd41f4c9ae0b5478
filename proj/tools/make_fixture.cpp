// Writes the synthetic five-scene fixture and a config that references it.
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sceneaware/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic five-scene dataset with masks, homographies and a config", "make_fixture"};
  std::string dir = "fixture";
  sceneaware::synthetic::FixtureOptions opts;
  app.add_option("dir", dir, "Target directory");
  app.add_option("--seed", opts.seed, "Jitter and training seed");
  app.add_option("--length", opts.track_length, "Frames per track")->check(CLI::Range(20, 200));
  app.add_option("--d-model", opts.d_model, "Model width written to the config");
  app.add_option("--layers", opts.layers, "Encoder and decoder layers");
  app.add_option("--heads", opts.heads, "Attention heads");
  app.add_option("--max-steps", opts.max_steps, "Training step cap");
  app.add_option("--mode", opts.mode, "deterministic or stochastic")->check(CLI::IsMember({"deterministic", "stochastic"}));
  CLI11_PARSE(app, argc, argv);
  try {
    std::cout << sceneaware::synthetic::write_benchmark_fixture(dir, opts).string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
