#pragma once

#include "baddet/error.hpp"

#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

namespace testing {

namespace fs = std::filesystem;

inline fs::path fixtures() { return fs::path(BADDET_FIXTURES); }

/// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("baddet_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <class Fn>
baddet::ErrorKind error_kind_of(Fn&& fn) {
    try {
        fn();
    } catch (const baddet::Error& e) {
        return e.kind();
    }
    FAIL("expected a baddet::Error");
    return baddet::ErrorKind::Usage;
}

template <class Fn>
std::string error_message_of(Fn&& fn) {
    try {
        fn();
    } catch (const baddet::Error& e) {
        return e.what();
    }
    FAIL("expected a baddet::Error");
    return {};
}

}  // namespace testing
