#pragma once

#include "misreg/abc.hpp"
#include "misreg/common.hpp"
#include "misreg/covfit.hpp"
#include "misreg/covmodel.hpp"
#include "misreg/dataset.hpp"
#include "misreg/empvario.hpp"
#include "misreg/fieldsim.hpp"
#include "misreg/geometry.hpp"
#include "misreg/harness.hpp"
#include "misreg/io.hpp"
#include "misreg/kriging.hpp"
#include "misreg/mindist.hpp"
#include "misreg/optim.hpp"
#include "misreg/rng.hpp"
#include "misreg/twostep.hpp"
