// Regenerates data/decoder_golden.json. Run once from a verified build:
//   make_golden <path>
#include <fstream>
#include <iostream>

#include "golden_case.hpp"
#include "json.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_golden <output.json>\n";
    return 2;
  }
  const sigcn::Prediction p =
      sigcn::decode(golden::input(), golden::params(), golden::kOutH, golden::kOutW);
  nlohmann::json j;
  j["dims"] = p.logits.dims();
  j["logits"] = p.logits.vec();
  std::ofstream(argv[1]) << j.dump() << "\n";
  return 0;
}
