#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace eyeref::cli {

/// Exit codes: 0 success, 1 runtime failure (one `ERROR <code> <message>`
/// line on stderr), 2 usage error.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args);  // args exclude the program name

/// Writes losses.csv, table1.csv and grid_iter{N}.png (one per refiner
/// checkpoint, `samples` rows of synthetic | refined | real) for a
/// train-refiner run directory. Errors: MissingRun.
void report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir, int samples);
void report(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir);

}  // namespace eyeref::cli
