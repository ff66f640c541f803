#include <atomic>
#include <csignal>
#include <iostream>
#include <string>
#include <vector>

#include <unistd.h>

#include "refloop/cli.hpp"

namespace {

std::atomic<bool> g_cancel{false};

extern "C" void on_sigint(int) {
  // Second Ctrl-C exits at once; run logs are flushed per line.
  if (g_cancel.exchange(true)) _exit(130);
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_sigint);
  std::vector<std::string> args(argv + 1, argv + argc);
  return refloop::run_cli(args, std::cout, std::cerr, &g_cancel);
}
