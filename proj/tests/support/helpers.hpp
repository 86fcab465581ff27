#pragma once

#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>

#include "compact/error.hpp"

namespace testing {

class TempDir {
public:
    explicit TempDir(std::string_view tag = "compact") {
        std::random_device rd;
        const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
        path_ = std::filesystem::temp_directory_path() /
                (std::string(tag) + "-" + std::to_string(stamp) + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(std::string_view name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Message of the compact::Error thrown by fn, or "" when it does not throw.
template <typename F>
std::string error_message(F&& fn) {
    try {
        fn();
    } catch (const compact::Error& e) {
        return e.what();
    }
    return {};
}

template <typename F>
bool throws_with(F&& fn, std::string_view needle) {
    const std::string msg = error_message(fn);
    return !msg.empty() && msg.find(needle) != std::string::npos;
}

}  // namespace testing
