#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "run_config.h"

namespace xaib::cli {

inline constexpr const char* kCommands[] = {"synth", "train", "eval", "explain", "localise", "mcd", "flip"};

void CmdSynth(const RunConfig& cfg, std::ostream& log);
void CmdTrain(const RunConfig& cfg, std::ostream& log);
void CmdEval(const RunConfig& cfg, std::ostream& log);
void CmdExplain(const RunConfig& cfg, std::ostream& log);
void CmdLocalise(const RunConfig& cfg, std::ostream& log);
void CmdMcd(const RunConfig& cfg, std::ostream& log);
void CmdFlip(const RunConfig& cfg, std::ostream& log);

// Dispatches on cfg.command after writing <out>/run_config.json.
void RunCommand(const RunConfig& cfg, std::ostream& log);

// Full command line (without the program name). Returns the process exit
// code: 0 success, 1 computational error, 2 usage or IO error.
int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err, const EnvLookup& env);

// File-name-safe form of a class or record name.
std::string SafeName(const std::string& name);

}  // namespace xaib::cli
