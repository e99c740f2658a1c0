#include "dkf/report.hpp"

#include "dkf/numkit.hpp"

#include <Eigen/Core>
#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace dkf {

namespace {

std::string hex(const unsigned char* d, unsigned n) {
    static const char* digits = "0123456789abcdef";
    std::string s(2 * n, '0');
    for (unsigned i = 0; i < n; ++i) {
        s[2 * i] = digits[d[i] >> 4];
        s[2 * i + 1] = digits[d[i] & 15];
    }
    return s;
}

}  // namespace

std::string sha256_hex(const std::string& bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1)
        throw std::runtime_error("sha256: digest failed");
    return hex(md.data(), len);
}

std::string sha256_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("sha256: cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return sha256_hex(ss.str());
}

ReportBundle::ReportBundle(std::filesystem::path root, std::string command)
    : root_(std::move(root)), command_(std::move(command)) {
    std::filesystem::create_directories(root_);
}

void ReportBundle::add(const std::string& rel, const std::function<void(std::ostream&)>& writer) {
    const auto path = root_ / rel;
    std::filesystem::create_directories(path.parent_path());
    std::ostringstream body;
    writer(body);
    std::lock_guard lock(mu_);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("report: cannot write " + path.string());
    os << body.str();
    files_.push_back(rel);
}

void ReportBundle::add_text(const std::string& rel, const std::string& text) {
    add(rel, [&](std::ostream& os) { os << text; });
}

std::vector<std::string> ReportBundle::files() const {
    std::lock_guard lock(mu_);
    return files_;
}

nlohmann::json build_info() {
    return {{"dkf", "0.1.0"},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                          std::to_string(EIGEN_MINOR_VERSION)},
            {"compiler", __VERSION__},
            {"cxx", __cplusplus},
            {"rng", Rng::kAlgorithm}};
}

void ReportBundle::finalize(double wall_seconds) {
    nlohmann::json s = {{"command", command_}, {"config", config_}, {"seeds", seeds_}, {"results", summary_}};
    add_text("summary.json", s.dump(2) + "\n");

    nlohmann::json files = nlohmann::json::array();
    std::vector<std::string> names = this->files();
    std::sort(names.begin(), names.end());
    for (const auto& f : names)
        files.push_back({{"path", f},
                         {"sha256", sha256_file(root_ / f)},
                         {"bytes", std::filesystem::file_size(root_ / f)}});
    nlohmann::json m = {{"command", command_},   {"versions", build_info()}, {"config", config_},
                        {"seeds", seeds_},       {"wall_seconds", wall_seconds}, {"files", files}};
    std::ofstream os(root_ / "manifest.json");
    if (!os) throw std::runtime_error("report: cannot write manifest");
    os << m.dump(2) << "\n";
}

}  // namespace dkf
