#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace advtag::cli {

enum ExitCode : int { kSuccess = 0, kUnsuccessful = 1, kConfigError = 2, kIoError = 3 };

// Subcommands: synth, train, attack, render, batch, evaluate.
int run(int argc, char** argv);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Class names live beside the model file: model.bin -> model.labels.
std::filesystem::path labels_path(const std::filesystem::path& model);

}  // namespace advtag::cli
