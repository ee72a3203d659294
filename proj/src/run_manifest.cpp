#include "atlas_istn/run_manifest.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <memory>

#include "atlas_istn/error.hpp"

namespace atlas_istn::run {

namespace fs = std::filesystem;

namespace {

class Sha1 {
public:
    Sha1() : ctx_(EVP_MD_CTX_new(), EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha1(), nullptr) != 1) throw IoError("sha1 init failed");
    }
    void update(const void* data, std::size_t n) { EVP_DigestUpdate(ctx_.get(), data, n); }
    std::string hex() {
        unsigned char md[EVP_MAX_MD_SIZE];
        unsigned int len = 0;
        EVP_DigestFinal_ex(ctx_.get(), md, &len);
        static const char* digits = "0123456789abcdef";
        std::string out;
        for (unsigned int i = 0; i < len; ++i) {
            out.push_back(digits[md[i] >> 4]);
            out.push_back(digits[md[i] & 15]);
        }
        return out;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

}  // namespace

std::string git_blob_hash(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw IoError("cannot read '" + file.string() + "'");
    const auto size = fs::file_size(file);
    Sha1 h;
    const std::string header = "blob " + std::to_string(size);
    h.update(header.data(), header.size() + 1);  // includes the NUL
    std::vector<char> buf(1 << 16);
    while (in) {
        in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    return h.hex();
}

std::string combined_hash(std::vector<FileDigest> digests) {
    std::sort(digests.begin(), digests.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    Sha1 h;
    for (const auto& d : digests) {
        const std::string line = d.hash + " " + d.path + "\n";
        h.update(line.data(), line.size());
    }
    return h.hex();
}

std::vector<FileDigest> digest_tree(const fs::path& root, const std::string& skip_prefix) {
    std::vector<FileDigest> out;
    if (!fs::exists(root)) return out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        if (!skip_prefix.empty() && name.rfind(skip_prefix, 0) == 0) continue;
        if (name.find(".tmp") != std::string::npos) continue;
        out.push_back({fs::relative(e.path(), root).generic_string(), git_blob_hash(e.path())});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.path < b.path; });
    return out;
}

nlohmann::json RunManifest::to_json() const {
    auto list = [](const std::vector<FileDigest>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& d : v) a.push_back({{"path", d.path}, {"hash", d.hash}});
        return a;
    };
    nlohmann::json j = {{"format_version", kRunManifestFormatVersion},
                        {"command", command},
                        {"config", config},
                        {"seed", seed},
                        {"deterministic", deterministic},
                        {"inputs", list(inputs)},
                        {"input_hash", combined_hash(inputs)},
                        {"outputs", list(outputs)},
                        {"output_hash", combined_hash(outputs)},
                        {"status", status}};
    if (!error.empty()) j["error"] = error;
    if (started_utc || finished_utc)
        j["timestamps"] = {{"started", started_utc.value_or("")}, {"finished", finished_utc.value_or("")}};
    return j;
}

fs::path RunManifest::write(const fs::path& out_dir) const {
    fs::create_directories(out_dir);
    const fs::path path = out_dir / ("run_manifest_" + command + ".json");
    std::ofstream out(path);
    out << to_json().dump(2) << "\n";
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    return path;
}

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace atlas_istn::run
