#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace spinesim::service {

struct MultipartPart {
  std::string name;
  std::string filename;
  std::string content_type;
  std::string body;
};

/// Boundary parameter of a multipart/form-data Content-Type. Throws FormatError.
std::string multipart_boundary(std::string_view content_type);

/// Splits a multipart/form-data body. Throws FormatError on malformed input.
std::vector<MultipartPart> parse_multipart(std::string_view body, std::string_view boundary);

}  // namespace spinesim::service
