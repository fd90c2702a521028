#include "spinesim/service/multipart.hpp"

#include <algorithm>
#include <cctype>

#include "spinesim/errors.hpp"

namespace spinesim::service {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  return s;
}

// Value of `key` among ';'-separated parameters, quotes stripped.
std::string param(std::string_view header, std::string_view key) {
  std::size_t pos = 0;
  while (pos < header.size()) {
    const std::size_t end = std::min(header.find(';', pos), header.size());
    const std::string_view item = trim(header.substr(pos, end - pos));
    const auto eq = item.find('=');
    if (eq != std::string_view::npos && lower(trim(item.substr(0, eq))) == key) {
      std::string_view v = trim(item.substr(eq + 1));
      if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
      return std::string(v);
    }
    pos = end + 1;
  }
  return {};
}

}  // namespace

std::string multipart_boundary(std::string_view content_type) {
  if (lower(content_type).rfind("multipart/form-data", 0) != 0)
    throw FormatError("expected multipart/form-data content");
  std::string b = param(content_type, "boundary");
  if (b.empty() || b.size() > 70) throw FormatError("missing or invalid multipart boundary");
  return b;
}

std::vector<MultipartPart> parse_multipart(std::string_view body, std::string_view boundary) {
  const std::string delim = "--" + std::string(boundary);
  std::vector<MultipartPart> parts;
  std::size_t pos = body.find(delim);
  if (pos == std::string_view::npos) throw FormatError("multipart body has no boundary");
  pos += delim.size();
  for (;;) {
    if (body.substr(pos, 2) == "--") return parts;
    if (body.substr(pos, 2) != "\r\n") throw FormatError("malformed multipart delimiter");
    pos += 2;
    const std::size_t head_end = body.find("\r\n\r\n", pos);
    if (head_end == std::string_view::npos) throw FormatError("multipart part without header terminator");

    MultipartPart part;
    std::string_view headers = body.substr(pos, head_end - pos);
    while (!headers.empty()) {
      const std::size_t eol = std::min(headers.find("\r\n"), headers.size());
      const std::string_view line = headers.substr(0, eol);
      headers.remove_prefix(std::min(eol + 2, headers.size()));
      const auto colon = line.find(':');
      if (colon == std::string_view::npos) throw FormatError("malformed multipart header");
      const std::string key = lower(trim(line.substr(0, colon)));
      const std::string_view value = trim(line.substr(colon + 1));
      if (key == "content-disposition") {
        part.name = param(value, "name");
        part.filename = param(value, "filename");
      } else if (key == "content-type") {
        part.content_type = std::string(value);
      }
    }
    const std::size_t data = head_end + 4;
    const std::size_t next = body.find("\r\n" + delim, data);
    if (next == std::string_view::npos) throw FormatError("multipart part is not terminated");
    part.body = std::string(body.substr(data, next - data));
    if (part.name.empty()) throw FormatError("multipart part without a name");
    parts.push_back(std::move(part));
    pos = next + 2 + delim.size();
  }
}

}  // namespace spinesim::service
