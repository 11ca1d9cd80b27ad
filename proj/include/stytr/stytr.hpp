#pragma once

#include "stytr/config.hpp"
#include "stytr/error.hpp"
#include "stytr/extractor.hpp"
#include "stytr/gradcheck.hpp"
#include "stytr/image.hpp"
#include "stytr/losses.hpp"
#include "stytr/model.hpp"
#include "stytr/ops.hpp"
#include "stytr/params.hpp"
#include "stytr/patching.hpp"
#include "stytr/pe_compare.hpp"
#include "stytr/posenc.hpp"
#include "stytr/random.hpp"
#include "stytr/run_config.hpp"
#include "stytr/samples.hpp"
#include "stytr/session.hpp"
#include "stytr/spatial.hpp"
#include "stytr/tensor.hpp"
#include "stytr/training.hpp"
#include "stytr/verify.hpp"
#include "stytr/weights_io.hpp"
