#pragma once

#include <string>

inline std::string repo_path(const std::string& rel) {
    return std::string(BQR_REPO_DIR) + "/" + rel;
}

inline std::string fixture_path(const std::string& rel) {
    return repo_path("tests/fixtures/" + rel);
}
