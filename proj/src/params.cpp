#include "semcomm/params.hpp"

#include "semcomm/errors.hpp"

namespace semcomm {

Tensor& ParamStore::create(const std::string& name, Tensor init, bool trainable) {
    if (entries_.count(name)) throw ContractError("duplicate parameter: " + name);
    Entry e;
    e.grad = Tensor(init.shape, 0.0f);
    e.value = std::move(init);
    e.trainable = trainable;
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

void ParamStore::zero_grad() {
    for (auto& [name, e] : entries_) {
        std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0f);
    }
}

std::int64_t ParamStore::trainable_count() const {
    std::int64_t n = 0;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) n += e.value.numel();
    }
    return n;
}

std::map<std::string, std::vector<float>> ParamStore::snapshot_trainable() const {
    std::map<std::string, std::vector<float>> snap;
    for (const auto& [name, e] : entries_) {
        if (e.trainable) snap.emplace(name, e.value.data);
    }
    return snap;
}

}  // namespace semcomm
