#pragma once

// Strict RFC-4180 style reader for the tool's CSV outputs. Lines starting
// with '#' are accepted only before the header row. Every record must have
// exactly as many fields as the header. Quoted fields follow RFC-4180
// (doubled quotes inside), bare quotes inside unquoted fields are errors.

#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace csv {

struct Table {
  std::vector<std::string> comments;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw std::runtime_error("csv: no column " + name);
  }
};

inline std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  std::size_t i = 0;
  while (true) {
    cur.clear();
    if (i < line.size() && line[i] == '"') {
      ++i;
      while (true) {
        if (i >= line.size()) throw std::runtime_error("csv: unterminated quote");
        if (line[i] == '"') {
          if (i + 1 < line.size() && line[i + 1] == '"') {
            cur += '"';
            i += 2;
            continue;
          }
          ++i;
          break;
        }
        cur += line[i++];
      }
      if (i < line.size() && line[i] != ',')
        throw std::runtime_error("csv: text after closing quote");
    } else {
      while (i < line.size() && line[i] != ',') {
        if (line[i] == '"') throw std::runtime_error("csv: bare quote in field");
        if (line[i] == '\r') throw std::runtime_error("csv: stray carriage return");
        cur += line[i++];
      }
    }
    fields.push_back(cur);
    if (i >= line.size()) break;
    ++i;  // comma
  }
  return fields;
}

inline Table parse(const std::string& text) {
  if (text.empty() || text.back() != '\n') throw std::runtime_error("csv: missing final newline");
  Table t;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) throw std::runtime_error("csv: empty line");
    if (t.header.empty() && line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    auto fields = split_record(line);
    if (t.header.empty()) {
      t.header = std::move(fields);
      continue;
    }
    if (fields.size() != t.header.size())
      throw std::runtime_error("csv: record has " + std::to_string(fields.size()) +
                               " fields, header has " + std::to_string(t.header.size()));
    t.rows.push_back(std::move(fields));
  }
  if (t.header.empty()) throw std::runtime_error("csv: no header");
  return t;
}

}  // namespace csv
