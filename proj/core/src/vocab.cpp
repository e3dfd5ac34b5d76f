#include "smetod/vocab.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace smetod {

std::vector<std::string> split_whitespace(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

const std::vector<std::string>& Vocab::reserved_tokens() {
    static const std::vector<std::string> r = {"[pad]", "[unk]", "[eos]", "[sys]",
                                               "[usr]", "[bs]",  "[db]",  "=",
                                               ";"};
    return r;
}

Vocab Vocab::build(std::span<const std::string> texts, std::span<const std::string> extra_tokens) {
    std::set<std::string> seen;
    for (const auto& text : texts)
        for (auto& tok : split_whitespace(text)) seen.insert(tok);
    for (const auto& tok : extra_tokens) seen.insert(tok);

    Vocab v;
    v.tokens_ = reserved_tokens();
    for (const auto& tok : v.tokens_) seen.erase(tok);
    for (const auto& tok : seen) v.tokens_.push_back(tok);
    v.rebuild_index();
    return v;
}

void Vocab::rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
        index_[tokens_[i]] = static_cast<int>(i);
}

int Vocab::id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || id >= size())
        throw std::out_of_range("Vocab::token: id " + std::to_string(id) + " outside vocab of " +
                                std::to_string(size()));
    return tokens_[static_cast<std::size_t>(id)];
}

std::vector<int> Vocab::encode(const std::string& text) const {
    std::vector<int> out;
    for (auto& tok : split_whitespace(text)) out.push_back(id(tok));
    return out;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id == kPad) continue;
        if (id == kEos) break;
        if (!out.empty()) out += ' ';
        out += token(id);
    }
    return out;
}

void Vocab::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("Vocab::save: cannot write " + path);
    for (const auto& tok : tokens_) f << tok << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("Vocab::load: cannot open " + path);
    Vocab v;
    std::string line;
    while (std::getline(f, line))
        if (!line.empty()) v.tokens_.push_back(line);
    if (v.tokens_.size() < reserved_tokens().size())
        throw std::runtime_error("Vocab::load: " + path + " lacks the reserved tokens");
    v.rebuild_index();
    return v;
}

} // namespace smetod
