#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "esdm/raster.hpp"

namespace esdm {

// Point survey: CSV with header x,y,volume,count (or x,y,volume,present).
struct SurveyTable {
  std::vector<Point> locations;
  std::vector<double> volume;
  std::vector<double> response;
  bool presence = false;

  std::size_t size() const { return locations.size(); }
  void validate() const;
};

void write_survey_csv(std::ostream& out, const SurveyTable& table);
void write_survey_csv_file(const std::string& path, const SurveyTable& table);
SurveyTable read_survey_csv(std::istream& in);
SurveyTable read_survey_csv_file(const std::string& path);

}  // namespace esdm
