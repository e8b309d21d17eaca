#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "fdpg/oracle.hpp"

namespace fdpg {

struct CriterionResult {
  int id = 0;
  std::string title;
  std::vector<oracle::OracleReport> reports;
  // Checks reported but excluded from the pass decision, with the reason.
  std::vector<std::string> waived;
  std::string detail;
  double seconds = 0.0;
  double limit_seconds = 0.0;

  // Every non-waived report passes and the runtime limit holds.
  bool pass() const;
};

struct AcceptanceOptions {
  // Criteria to run (1..11); empty runs all.
  std::vector<int> only;
  // Scratch directory for CLI determinism runs.
  std::filesystem::path scratch = std::filesystem::temp_directory_path() / "fdpg-acceptance";
};

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {});

// One "PASS"/"FAIL" line per criterion followed by indented details.
void print_acceptance(std::ostream& out, const std::vector<CriterionResult>& results);

// Every report of every criterion, prefixed with "c<id>:" in the quantity column.
void write_acceptance_csv(std::ostream& out, const std::vector<CriterionResult>& results);

bool all_passed(const std::vector<CriterionResult>& results);

}  // namespace fdpg
