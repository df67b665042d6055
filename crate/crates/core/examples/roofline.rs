//! Service time against batch size on both CPUs and on the accelerator,
//! with the batch at which offloading starts to pay.

use recsim::model::builtin_model;
use recsim::platform::{accel_service_time, broadwell, crossover_batch, cpu_service_time, default_accelerator, skylake};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "DLRM-RMC1".into());
    let m = builtin_model(&name).unwrap();
    let accel = default_accelerator();
    println!("batch  skylake(1 core)  skylake(40)  broadwell(28)  accelerator  [ms]");
    for b in [1, 4, 16, 64, 256, 1024] {
        let sky = skylake();
        let bdw = broadwell();
        println!(
            "{b:>5}  {:>15.3}  {:>11.3}  {:>13.3}  {:>11.3}",
            cpu_service_time(&m, b, 1, &sky).total * 1e3,
            cpu_service_time(&m, b, sky.cores, &sky).total * 1e3,
            cpu_service_time(&m, b, bdw.cores, &bdw).total * 1e3,
            accel_service_time(&m, b, &accel).total * 1e3,
        );
    }
    for cpu in [skylake(), broadwell()] {
        match crossover_batch(&m, &cpu, &accel) {
            Some(b) => println!("accelerator beats one {} core from batch {b}", cpu.name),
            None => println!("accelerator never beats one {} core", cpu.name),
        }
    }
}
