// Runs the psseg binary through the shell and captures its combined output.
#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace cli_runner {

struct Outcome {
  int status = -1;
  std::string output;
};

inline std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

inline Outcome run(const std::string& args, const std::filesystem::path& log) {
  const std::string cmd = quote(PSSEG_CLI) + " " + args + " > " + quote(log.string()) + " 2>&1";
  const int raw = std::system(cmd.c_str());
  Outcome o;
  o.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::ifstream in(log);
  std::ostringstream ss;
  ss << in.rdbuf();
  o.output = ss.str();
  return o;
}

}  // namespace cli_runner
