#pragma once

#include <map>
#include <string>
#include <vector>

namespace sewgen {

// Conditioning rows fed to cross-attention; at least one row of width d.
struct CondEmbedding {
    int d = 0;
    std::vector<float> data; // rows * d, row-major

    int rows() const { return d == 0 ? 0 : static_cast<int>(data.size()) / d; }
    const float* row(int r) const { return data.data() + static_cast<size_t>(r) * d; }
};

enum class ProviderKind { kHashedBow, kFileLookup, kNull };

const char* provider_kind_name(ProviderKind k);
ProviderKind provider_kind_from_name(const std::string& name);

// Caption-embedding provider. hashed_bow hashes lowercased words into `dim`
// buckets and L2-normalizes; file_lookup reads precomputed vectors from a JSON
// map {"caption": [f32,...]}; null returns the zero vector.
struct ProviderSpec {
    ProviderKind kind = ProviderKind::kHashedBow;
    int dim = 1024;
    std::string path; // file_lookup only
};

class CaptionProvider {
  public:
    static CaptionProvider make(const ProviderSpec& spec);

    // Deterministic in (spec, caption). file_lookup misses throw
    // UnknownCaptionError.
    std::vector<float> embed(const std::string& caption) const;

    const ProviderSpec& spec() const { return spec_; }

  private:
    ProviderSpec spec_;
    std::map<std::string, std::vector<float>> table_;
};

// One-shot convenience wrapper around CaptionProvider.
std::vector<float> embed_caption(const ProviderSpec& spec, const std::string& caption);

} // namespace sewgen
