#include "apps/io.hpp"

#include <fstream>
#include <sstream>

#include "apps/errors.hpp"

namespace apps {

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open file: " + path);
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out << content;
}

std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const nlohmann::json& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

std::vector<nlohmann::json> parse_jsonl(const std::string& content) {
  std::vector<nlohmann::json> out;
  std::istringstream in(content);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("invalid JSONL at line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string dataset_to_jsonl(const Dataset& data) {
  std::vector<nlohmann::json> records;
  records.reserve(data.size());
  for (const BoundarySample& s : data) {
    records.push_back(
        {{"group", s.group}, {"features", s.features}, {"target", s.target}});
  }
  return to_jsonl(records);
}

Dataset dataset_from_jsonl(const std::string& content) {
  Dataset data;
  for (const nlohmann::json& r : parse_jsonl(content)) {
    try {
      BoundarySample s;
      s.group = r.at("group").get<std::int64_t>();
      s.features = r.at("features").get<std::vector<double>>();
      s.target = r.at("target").get<double>();
      data.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("supervision record: ") + e.what());
    }
  }
  return data;
}

std::string to_csv(const std::vector<std::string>& header,
                   const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  auto join = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i > 0) out += ',';
      out += fields[i];
    }
    out += '\n';
  };
  join(header);
  for (const std::vector<std::string>& row : rows) join(row);
  return out;
}

std::string format_double(double v) {
  return nlohmann::json(v).dump();
}

}  // namespace apps
