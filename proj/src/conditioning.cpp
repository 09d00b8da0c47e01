#include "sewgen/conditioning.hpp"

#include <cctype>
#include <cmath>
#include <fstream>

#include "json.hpp"

#include "sewgen/errors.hpp"

namespace sewgen {

namespace {

// FNV-1a 64-bit
uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

const char* provider_kind_name(ProviderKind k) {
    switch (k) {
        case ProviderKind::kHashedBow: return "hashed_bow";
        case ProviderKind::kFileLookup: return "file_lookup";
        case ProviderKind::kNull: return "null";
    }
    return "?";
}

ProviderKind provider_kind_from_name(const std::string& name) {
    if (name == "hashed_bow") return ProviderKind::kHashedBow;
    if (name == "file_lookup") return ProviderKind::kFileLookup;
    if (name == "null") return ProviderKind::kNull;
    throw ConfigError("unknown caption provider kind: " + name);
}

CaptionProvider CaptionProvider::make(const ProviderSpec& spec) {
    if (spec.dim <= 0) {
        throw ConfigError("caption provider: dim must be positive");
    }
    CaptionProvider p;
    p.spec_ = spec;
    if (spec.kind == ProviderKind::kFileLookup) {
        std::ifstream in(spec.path, std::ios::binary);
        if (!in) throw IoError("caption provider: cannot open " + spec.path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw IoError(std::string("caption provider: bad JSON: ") + e.what());
        }
        for (const auto& [key, value] : j.items()) {
            std::vector<float> v;
            for (const auto& x : value) v.push_back(x.get<float>());
            if (static_cast<int>(v.size()) != spec.dim) {
                throw ConfigError("caption provider: vector for \"" + key + "\" has length " +
                                  std::to_string(v.size()) + ", expected " + std::to_string(spec.dim));
            }
            p.table_.emplace(key, std::move(v));
        }
    }
    return p;
}

std::vector<float> CaptionProvider::embed(const std::string& caption) const {
    switch (spec_.kind) {
        case ProviderKind::kNull:
            return std::vector<float>(spec_.dim, 0.0f);
        case ProviderKind::kFileLookup: {
            auto it = table_.find(caption);
            if (it == table_.end()) {
                throw UnknownCaptionError("caption provider: no embedding for \"" + caption + "\"");
            }
            return it->second;
        }
        case ProviderKind::kHashedBow:
            break;
    }

    // Lowercase, split on non-alphanumerics, hash each word into a bucket.
    std::vector<float> v(spec_.dim, 0.0f);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) {
            v[fnv1a(word) % static_cast<uint64_t>(spec_.dim)] += 1.0f;
            word.clear();
        }
    };
    for (unsigned char c : caption) {
        if (std::isalnum(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
        } else {
            flush();
        }
    }
    flush();

    double norm_sq = 0.0;
    for (float x : v) norm_sq += static_cast<double>(x) * x;
    if (norm_sq > 0.0) {
        const float inv = static_cast<float>(1.0 / std::sqrt(norm_sq));
        for (float& x : v) x *= inv;
    }
    return v;
}

std::vector<float> embed_caption(const ProviderSpec& spec, const std::string& caption) {
    return CaptionProvider::make(spec).embed(caption);
}

} // namespace sewgen
