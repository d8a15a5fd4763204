#pragma once

#include "fastfusion/cli.hpp"
#include "fastfusion/config.hpp"
#include "fastfusion/errors.hpp"
#include "fastfusion/fast.hpp"
#include "fastfusion/frame_io.hpp"
#include "fastfusion/geometry.hpp"
#include "fastfusion/iekf.hpp"
#include "fastfusion/image.hpp"
#include "fastfusion/imu_preint.hpp"
#include "fastfusion/maintenance.hpp"
#include "fastfusion/metrics.hpp"
#include "fastfusion/patch.hpp"
#include "fastfusion/pipeline.hpp"
#include "fastfusion/png_io.hpp"
#include "fastfusion/sensor_types.hpp"
#include "fastfusion/synthetic.hpp"
#include "fastfusion/synthetic_io.hpp"
#include "fastfusion/tsdf.hpp"
