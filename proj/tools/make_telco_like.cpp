#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "telco_like.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic churn CSV with the Telco column layout"};
  std::string out_path = "telco_like.csv";
  std::size_t rows = 7043;
  std::uint64_t seed = 2024;
  app.add_option("-o,--out", out_path, "Output CSV path");
  app.add_option("--rows", rows, "Number of customers");
  app.add_option("--seed", seed, "Generator seed");
  CLI11_PARSE(app, argc, argv);

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot write " << out_path << "\n";
    return 2;
  }
  delta_recourse::synth::write_telco_like(out, rows, seed);
  return 0;
}
