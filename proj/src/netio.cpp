#include <json.hpp>

#include <cstring>
#include <fstream>
#include <vector>

#include "biospix/net.hpp"

namespace biospix {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'P', 'X'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const std::string& path, AssocNet<float>& net, std::uint64_t seed) {
    nlohmann::json header;
    header["format"] = "BSPX";
    header["version"] = kVersion;
    header["seed"] = seed;
    header["net"] = {{"in_channels", net.cfg.in_channels},
                     {"assoc_channels", net.cfg.assoc_channels},
                     {"kernel", net.cfg.kernel},
                     {"leaky_slope", net.cfg.leaky_slope}};
    auto entries = net.state();
    nlohmann::json jentries = nlohmann::json::array();
    for (auto& e : entries)
        jentries.push_back({{"name", e.name}, {"shape", e.shape()}, {"kind", e.is_param() ? "param" : "buffer"}});
    header["entries"] = jentries;
    const std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 4);
    const std::uint32_t ver = kVersion, hlen = static_cast<std::uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&ver), 4);
    f.write(reinterpret_cast<const char*>(&hlen), 4);
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (auto& e : entries) {
        if (e.is_param())
            f.write(reinterpret_cast<const char*>(e.t.data()), static_cast<std::streamsize>(e.t.size() * 4));
        else
            f.write(reinterpret_cast<const char*>(e.buf->data()),
                    static_cast<std::streamsize>(e.buf->size() * 4));
    }
    if (!f) throw IoError("checkpoint: short write to " + path);
}

AssocNet<float> load_checkpoint(const std::string& path, std::uint64_t* seed_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    char magic[4];
    std::uint32_t ver = 0, hlen = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&ver), 4);
    f.read(reinterpret_cast<char*>(&hlen), 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0) throw IoError("checkpoint: bad magic in " + path);
    if (ver != kVersion) throw IoError("checkpoint: unsupported version " + std::to_string(ver));
    std::string hs(hlen, '\0');
    f.read(hs.data(), hlen);
    if (!f) throw IoError("checkpoint: truncated header in " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("checkpoint: malformed header: ") + e.what());
    }
    NetConfig cfg;
    cfg.in_channels = header.at("net").at("in_channels").get<int>();
    cfg.assoc_channels = header.at("net").at("assoc_channels").get<int>();
    cfg.kernel = header.at("net").at("kernel").get<int>();
    cfg.leaky_slope = header.at("net").at("leaky_slope").get<double>();
    AssocNet<float> net(cfg);
    if (seed_out) *seed_out = header.at("seed").get<std::uint64_t>();

    auto entries = net.state();
    const auto& jentries = header.at("entries");
    if (jentries.size() != entries.size())
        throw IoError("checkpoint: expected " + std::to_string(entries.size()) + " entries, header has " +
                      std::to_string(jentries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& je = jentries[i];
        if (je.at("name").get<std::string>() != entries[i].name ||
            je.at("shape").get<std::vector<int>>() != entries[i].shape())
            throw IoError("checkpoint: entry mismatch at '" + entries[i].name + "'");
        float* dst = entries[i].is_param() ? entries[i].t.data() : entries[i].buf->data();
        const std::int64_t n = entries[i].is_param() ? entries[i].t.size() : entries[i].buf->size();
        f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n * 4));
        if (!f) throw IoError("checkpoint: truncated payload at '" + entries[i].name + "'");
    }
    return net;
}

}  // namespace biospix
