#pragma once

#include <cstdlib>
#include <string>

// Tests run from the build tree; CTest exports the source root so they can
// find configs/ and tests/data/.
inline std::string source_dir() {
    const char* d = std::getenv("PINCWELL_SOURCE_DIR");
    return d ? d : ".";
}

inline std::string config_path(const std::string& name) {
    return source_dir() + "/configs/" + name;
}

inline std::string data_path(const std::string& name) {
    return source_dir() + "/tests/data/" + name;
}
