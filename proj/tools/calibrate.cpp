// Sweeps the unpublished structural knobs and writes the ranking as Markdown.
//
//   sbc_calibrate [output.md] [top_n]

#include <cstdlib>
#include <fstream>
#include <iostream>

#include "sbcformer/calibration.hpp"

int main(int argc, char** argv) {
  namespace cal = sbc::calibration;
  const auto ranked = cal::sweep();
  const std::size_t top_n = argc > 2 ? static_cast<std::size_t>(std::atoi(argv[2])) : 15;
  const std::string md = cal::render_markdown(ranked, top_n);
  if (argc > 1) {
    std::ofstream f(argv[1]);
    f << md;
    if (!f) {
      std::cerr << "cannot write " << argv[1] << "\n";
      return 2;
    }
  } else {
    std::cout << md;
  }
  const bool matches = !ranked.empty() && ranked.front().point == cal::shipped_defaults();
  std::cerr << "best: " << ranked.front().point.label() << (ranked.front().feasible() ? "" : " (infeasible)")
            << (matches ? ", matches the shipped defaults\n" : ", DIFFERS from the shipped defaults\n");
  return matches ? 0 : 1;
}
