#pragma once

#include <map>
#include <string>
#include <vector>

namespace pimba {

// Plain key-value config dialect:
//   # comment
//   key = value
// Values are scalars or comma-separated lists; keys are flat (dots allowed
// by convention, e.g. dram.columns_per_row).
class KeyValueConfig {
  public:
    static KeyValueConfig parse_file(const std::string& path);
    static KeyValueConfig parse(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback = "") const;
    long get_int(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    std::vector<std::string> get_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace pimba
