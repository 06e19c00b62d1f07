#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "boltzctl/cli.hpp"

using namespace boltzctl;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("boltzctl_cli_" + name);
  fs::remove_all(p);
  return p;
}

std::map<std::string, std::string> small_diffusive(const fs::path& out) {
  return {{"N_override", "3"}, {"n_v", "16"}, {"p_center", "16"}, {"p_per_panel", "6"}, {"out", json(out.string()).dump()}};
}

}  // namespace

TEST(Config, DefaultsThenFileThenFlags) {
  const auto d = cli::make_config("diffusive", nullptr, {});
  EXPECT_EQ(d.num("eps"), 1.0);
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.out_dir, fs::path("."));
  const json file = {{"eps", 0.5}, {"n_v", 16}, {"seed", 7}};
  const auto f = cli::make_config("diffusive", file, {{"eps", "0.25"}});
  EXPECT_EQ(f.num("eps"), 0.25);
  EXPECT_EQ(f.integer("n_v"), 16);
  EXPECT_EQ(f.seed, 7u);
  const auto s = cli::make_config("spectral", nullptr, {{"l", "1,3,5"}});
  EXPECT_EQ(s.list("l"), (std::vector<double>{1, 3, 5}));
  EXPECT_EQ(cli::make_config("spectral", json{{"l", json::array({2, 4})}}, {}).list("l"), (std::vector<double>{2, 4}));
}

TEST(Config, RejectsBadInput) {
  EXPECT_THROW(cli::make_config("diffusive", json{{"foo", 1}}, {}), ValidationError);
  EXPECT_THROW(cli::make_config("diffusive", json{{"eps", "x"}}, {}), ValidationError);
  EXPECT_THROW(cli::make_config("diffusive", json{{"n_v", 2.5}}, {}), ValidationError);
  EXPECT_THROW(cli::make_config("diffusive", json{{"subcommand", "peel"}}, {}), ValidationError);
  EXPECT_THROW(cli::make_config("diffusive", json::array({1}), {}), ValidationError);
  EXPECT_THROW(cli::make_config("diffusive", json{{"eps", json{{"a", 1}}}}, {}), ValidationError);
  EXPECT_THROW(cli::make_config("spectral", nullptr, {{"l", "1,x"}}), ValidationError);
  EXPECT_THROW(cli::make_config("nope", nullptr, {}), ValidationError);
  EXPECT_THROW(cli::make_config("obstruct", nullptr, {{"seed", "-1"}}), ValidationError);
  EXPECT_NO_THROW(cli::make_config("diffusive", json{{"subcommand", "diffusive"}}, {}));
}

TEST(Run, ExitCodesAndNoPartialOutput) {
  std::ostringstream err;
  const auto bad = scratch("bad");
  auto flags = small_diffusive(bad);
  flags["eps"] = "0";
  EXPECT_EQ(cli::run(cli::make_config("diffusive", nullptr, flags), err), 2);
  EXPECT_FALSE(fs::exists(bad));
  EXPECT_NE(err.str().find("validation error"), std::string::npos);

  const auto sp = scratch("spectral");
  EXPECT_EQ(cli::run(cli::make_config("spectral", nullptr, {{"n_quad", "20"}, {"out", json(sp.string()).dump()}}), err), 2);
  EXPECT_FALSE(fs::exists(sp));
}

TEST(Run, DiffusiveOutputsAndManifest) {
  const auto dir = scratch("diffusive");
  std::ostringstream err;
  ASSERT_EQ(cli::run(cli::make_config("diffusive", nullptr, small_diffusive(dir)), err), 0) << err.str();
  const auto rows = parse_csv(read_file(dir / "diffusive_run.csv"));
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0], (std::vector<std::string>{"eps", "eta", "N", "k", "layer_margin", "tau_max", "f0_norm", "f1_norm", "observable"}));
  const auto m = json::parse(read_file(dir / "manifest.json"));
  EXPECT_EQ(m.at("subcommand"), "diffusive");
  EXPECT_EQ(m.at("input.N_override"), 3);
  EXPECT_TRUE(m.contains("warning"));
  EXPECT_EQ(m.at("file.diffusive_run.csv"), sha256_hex(read_file(dir / "diffusive_run.csv")));
  EXPECT_TRUE(m.contains("wall_time_s"));
  fs::remove_all(dir);
}

TEST(Run, RerunsAreByteIdentical) {
  const auto cfg = cli::make_config("obstruct", nullptr, {{"n_r", "4"}, {"mc_samples", "5000"}, {"seed", "3"}});
  const auto a = cli::execute(cfg), b = cli::execute(cfg);
  ASSERT_EQ(a.tables.size(), b.tables.size());
  for (size_t i = 0; i < a.tables.size(); ++i) EXPECT_EQ(render_csv(a.tables[i].second), render_csv(b.tables[i].second));
  const auto c = cli::execute(cli::make_config("obstruct", nullptr, {{"n_r", "4"}, {"mc_samples", "5000"}, {"seed", "4"}}));
  EXPECT_NE(render_csv(a.tables.back().second), render_csv(c.tables.back().second));
}
