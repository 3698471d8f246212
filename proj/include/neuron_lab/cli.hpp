#pragma once

namespace neuron_lab {

// Exit codes of the command-line tool.
inline constexpr int kExitPass = 0;
inline constexpr int kExitFail = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

// Entry point of the neuron_lab tool: run, verify, sweep and report.
int cli_main(int argc, char** argv);

}  // namespace neuron_lab
