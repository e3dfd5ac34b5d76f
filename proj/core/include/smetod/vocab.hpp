#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace smetod {

std::vector<std::string> split_whitespace(const std::string& text);

// Closed whitespace vocabulary: fixed reserved ids first, then the sorted
// unique tokens of the corpus. Unknown tokens map to [unk] when encoding.
class Vocab {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;
    static constexpr int kEos = 2;

    static const std::vector<std::string>& reserved_tokens();

    static Vocab build(std::span<const std::string> texts,
                       std::span<const std::string> extra_tokens = {});

    int size() const { return static_cast<int>(tokens_.size()); }
    int id(const std::string& token) const;
    const std::string& token(int id) const;
    bool contains(const std::string& token) const { return index_.count(token) > 0; }

    std::vector<int> encode(const std::string& text) const;
    std::string decode(std::span<const int> ids) const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;

    void rebuild_index();
};

} // namespace smetod
