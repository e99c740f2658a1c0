#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <string>
#include <vector>

namespace dkf {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

// One output directory. Every file goes through add(), so the manifest lists all of them.
class ReportBundle {
public:
    ReportBundle(std::filesystem::path root, std::string command);

    const std::filesystem::path& root() const { return root_; }

    // rel is relative to root; parent directories are created
    void add(const std::string& rel, const std::function<void(std::ostream&)>& writer);
    void add_text(const std::string& rel, const std::string& text);

    nlohmann::json& config() { return config_; }
    nlohmann::json& seeds() { return seeds_; }
    nlohmann::json& summary() { return summary_; }

    // writes summary.json and manifest.json; the manifest hashes every file including summary.json.
    // Wall time is recorded in the manifest only, so outputs of identical runs hash identically.
    void finalize(double wall_seconds);

    std::vector<std::string> files() const;

private:
    std::filesystem::path root_;
    std::string command_;
    nlohmann::json config_ = nlohmann::json::object();
    nlohmann::json seeds_ = nlohmann::json::object();
    nlohmann::json summary_ = nlohmann::json::object();
    std::vector<std::string> files_;
    mutable std::mutex mu_;
};

// versions of the pieces that shape numerical output
nlohmann::json build_info();

}  // namespace dkf
