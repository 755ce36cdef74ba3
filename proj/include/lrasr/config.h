// lrasr/config.h
//
// Flat "key = value" configuration files. Lines starting with '#' are
// comments; list values are comma separated.

#ifndef LRASR_CONFIG_H_
#define LRASR_CONFIG_H_

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lrasr {

class KeyValueConfig {
 public:
  static KeyValueConfig Parse(std::string_view text);
  static KeyValueConfig Load(const std::string& path);

  void Set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool Has(const std::string& key) const { return values_.count(key) > 0; }
  std::optional<std::string> Get(const std::string& key) const;

  std::string GetString(const std::string& key, const std::string& fallback) const;
  double GetDouble(const std::string& key, double fallback) const;
  long long GetInt(const std::string& key, long long fallback) const;
  bool GetBool(const std::string& key, bool fallback) const;
  std::vector<double> GetDoubleList(const std::string& key, const std::vector<double>& fallback) const;

  const std::map<std::string, std::string>& values() const { return values_; }

  // Sorted "key = value" lines.
  std::string Canonical() const;
  std::uint64_t Hash() const;

 private:
  std::map<std::string, std::string> values_;
};

std::string FormatList(const std::vector<double>& values);
std::string FormatNumber(double value);
std::string HexHash(std::uint64_t hash);

}  // namespace lrasr

#endif  // LRASR_CONFIG_H_
