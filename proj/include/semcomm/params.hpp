#pragma once

#include <map>
#include <string>
#include <vector>

#include "semcomm/tensor.hpp"

namespace semcomm {

// Named parameter tensors with gradient buffers. Running statistics of
// batch normalization live here too, flagged non-trainable. std::map keeps
// iteration order deterministic for optimizers and serialization.
class ParamStore {
  public:
    struct Entry {
        Tensor value;
        Tensor grad;
        bool trainable = true;
    };

    Tensor& create(const std::string& name, Tensor init, bool trainable = true);
    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    Tensor& value(const std::string& name) { return entry(name).value; }
    const Tensor& value(const std::string& name) const { return entry(name).value; }
    Tensor& grad(const std::string& name) { return entry(name).grad; }

    void zero_grad();
    std::size_t size() const { return entries_.size(); }
    std::int64_t trainable_count() const;

    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

    // Deep copy of all trainable values, for bit-exact no-op checks.
    std::map<std::string, std::vector<float>> snapshot_trainable() const;

  private:
    std::map<std::string, Entry> entries_;
};

}  // namespace semcomm
