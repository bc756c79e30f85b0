// Acceptance runner: one PASS/FAIL line per criterion.
//
//   nca_acceptance [--criterion NAME]... [--artifacts DIR] [--nca PATH]
//   nca_acceptance --prepare-desk --artifacts DIR

#include <chrono>
#include <iostream>

#include "CLI11.hpp"

#include "acceptance.hpp"
#include "nca/parallel.hpp"

using namespace acceptance;

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<std::string> only;
  Context ctx;
  std::string artifacts = "artifacts";
  std::string nca = "nca";
  bool prepare = false;
  bool list = false;
  app.add_option("--criterion", only, "Run only these (repeatable)");
  app.add_option("--artifacts", artifacts)->capture_default_str();
  app.add_option("--nca", nca, "CLI binary for the determinism checks")->capture_default_str();
  app.add_flag("--prepare-desk", prepare, "Train the desk-scale model and exit");
  app.add_flag("--list", list);
  CLI11_PARSE(app, argc, argv);
  ctx.artifacts = std::filesystem::absolute(artifacts);
  ctx.nca = std::filesystem::absolute(nca);
  ctx.threads = nca::hardware_threads();
  std::filesystem::create_directories(ctx.artifacts);

  if (prepare) return prepare_desk_model(ctx);

  std::vector<Criterion> all = numeric_criteria();
  for (auto* group : {&model_criteria, &system_criteria})
    for (auto& c : (*group)()) all.push_back(std::move(c));

  if (list) {
    for (const auto& c : all) std::cout << c.name << (c.primary ? "" : " (secondary)") << "\n";
    return 0;
  }
  for (const auto& name : only) {
    bool known = false;
    for (const auto& c : all) known = known || c.name == name;
    if (!known) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }

  int failed = 0;
  for (const auto& c : all) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.name) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what(), {}};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << (o.pass ? "PASS " : "FAIL ") << (c.primary ? "" : "[secondary] ") << c.name << ": " << o.detail
              << cat(" (", secs, " s)") << std::endl;
    for (const auto& line : o.info) std::cout << "     info: " << line << std::endl;
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
