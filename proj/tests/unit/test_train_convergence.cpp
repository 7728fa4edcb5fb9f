#include <doctest.h>

#include <filesystem>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "liftvsr/io.hpp"

using namespace liftvsr;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "liftvsr");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::vector<double> read_losses(const fs::path& csv) {
  std::istringstream in(io::read_file(csv));
  std::string line;
  std::getline(in, line);
  std::vector<double> out;
  while (std::getline(in, line)) out.push_back(std::stod(line.substr(line.find(',') + 1)));
  return out;
}

double mean(std::vector<double>::const_iterator a, std::vector<double>::const_iterator b) {
  return std::accumulate(a, b, 0.0) / static_cast<double>(b - a);
}

}  // namespace

// Default model and data, default learning rate: the loss must halve between
// the first and the last 50 steps of a 500-step run.
TEST_CASE("default training run halves the loss in 500 steps") {
  const auto dir = fs::temp_directory_path() / "liftvsr_convergence";
  fs::remove_all(dir);
  fs::create_directories(dir);
  REQUIRE(run({"gen", "--out", (dir / "data").string()}) == 0);
  REQUIRE(run({"train", "--data", (dir / "data").string(), "--steps", "500", "--out",
               (dir / "run").string()}) == 0);
  const auto losses = read_losses(dir / "run" / "loss.csv");
  REQUIRE(losses.size() == 500);
  const double first = mean(losses.begin(), losses.begin() + 50);
  const double last = mean(losses.end() - 50, losses.end());
  MESSAGE("first-50 mean " << first << ", last-50 mean " << last << ", ratio " << last / first);
  CHECK(last < 0.5 * first);
}
