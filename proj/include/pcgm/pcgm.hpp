#pragma once

#include "pcgm/affinity.hpp"
#include "pcgm/cloud.hpp"
#include "pcgm/descriptor.hpp"
#include "pcgm/graph.hpp"
#include "pcgm/graph_matching.hpp"
#include "pcgm/hungarian.hpp"
#include "pcgm/keypoints.hpp"
#include "pcgm/normals.hpp"
#include "pcgm/pipeline.hpp"
#include "pcgm/spatial_grid.hpp"
#include "pcgm/spherical_harmonics.hpp"
#include "pcgm/synthetic.hpp"
#include "pcgm/transform.hpp"
