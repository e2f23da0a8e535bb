//! Shared fixtures for the criterion benchmarks.

use powerbuf_core::{BatteryBank, BatteryCalibration, ParamTable, SagEvent, SagLoad};

pub fn reference_load() -> SagLoad {
    SagLoad::new(100e3, 415.0, 415.0 * 415.0 / 100e3).unwrap()
}

pub fn reference_bank() -> BatteryBank {
    BatteryBank {
        calibration: BatteryCalibration::calibrated_default(),
        table: ParamTable::reference(),
        sod: 0.0,
    }
}

pub fn reference_sag() -> Vec<SagEvent> {
    vec![SagEvent::new(0.04, 0.2, 0.8, 0.2).unwrap()]
}
