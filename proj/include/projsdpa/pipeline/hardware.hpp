#pragma once

#include <fstream>
#include <string>
#include <thread>

namespace projsdpa::pipeline {

/// CPU model name from /proc/cpuinfo (or "unknown") and hardware thread count.
inline std::string hardware_description() {
  std::string model = "unknown";
  std::ifstream in("/proc/cpuinfo");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        model = line.substr(colon + 1);
        model.erase(0, model.find_first_not_of(' '));
      }
      break;
    }
  }
  return model + "; hardware_threads=" + std::to_string(std::thread::hardware_concurrency());
}

}  // namespace projsdpa::pipeline
