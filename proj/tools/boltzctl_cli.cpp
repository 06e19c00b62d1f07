#include <algorithm>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "boltzctl/cli.hpp"

namespace {

std::string dashed(std::string k) {
  std::replace(k.begin(), k.end(), '_', '-');
  return k;
}

struct SubState {
  CLI::App* app = nullptr;
  std::map<std::string, std::optional<std::string>> flags;
  std::string config, out;
  std::optional<long long> seed;
};

}  // namespace

int main(int argc, char** argv) {
  using namespace boltzctl;
  CLI::App app{"Boundary control and obstruction experiments for linear Boltzmann transport"};
  app.set_version_flag("--version", cli::kVersion);
  app.require_subcommand(1);
  std::map<std::string, SubState> subs;
  for (const auto& spec : cli::commands()) {
    auto& st = subs[spec.name];
    st.app = app.add_subcommand(spec.name, spec.help);
    st.app->add_option("--config", st.config, "flat JSON file of parameters (flags override it)");
    st.app->add_option("--out", st.out, "output directory (default .)");
    st.app->add_option("--seed", st.seed, "RNG seed (default 42)");
    for (const auto& p : spec.params) {
      auto& slot = st.flags[p.key];
      const std::string def = p.def.is_string() ? p.def.get<std::string>() : p.def.dump();
      st.app->add_option("--" + dashed(p.key), slot, p.help + " [" + def + "]");
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (auto& [name, st] : subs) {
    if (!st.app->parsed()) continue;
    try {
      nlohmann::ordered_json file;
      if (!st.config.empty()) {
        try {
          file = nlohmann::ordered_json::parse(read_file(st.config));
        } catch (const nlohmann::json::parse_error& e) {
          throw ValidationError(st.config + ": " + e.what());
        }
      }
      std::map<std::string, std::string> flags;
      for (const auto& [k, v] : st.flags)
        if (v) flags[k] = *v;
      if (!st.out.empty()) flags["out"] = nlohmann::json(st.out).dump();
      if (st.seed) flags["seed"] = std::to_string(*st.seed);
      const auto cfg = cli::make_config(name, file, flags);
      return cli::run(cfg);
    } catch (const ValidationError& e) {
      std::cerr << "validation error: " << e.what() << "\n";
      return 2;
    } catch (const IoError& e) {
      std::cerr << "i/o error: " << e.what() << "\n";
      return 2;
    }
  }
  return 2;
}
