//! Plain-text checkpoints of student, teacher and input standardization.
//!
//! ```text
//! mlsn-checkpoint 1
//! arch <input_dim> <hidden> <feature_dim> <classifier_hidden> <similarity_hidden> <classes>
//! teacher <alpha_max> <step> <noise_sigma>
//! standardizer <d>            (optional, followed by a mean line and a scale line)
//! tensor <name> <dim>...      (followed by one line of values)
//! ```
//!
//! Width lists are comma separated or `none`. Tensor names are prefixed
//! with `student.` or `teacher.`. Values are written in shortest
//! round-trip exponent form, so loading reproduces every bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::networks::{ModelSpec, ModelState};
use crate::params::ParamSet;
use crate::teacher::TeacherState;
use crate::tensor::Tensor;

const MAGIC: &str = "mlsn-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub student: ModelState,
    pub teacher: TeacherState,
    pub standardizer: Option<Standardizer>,
}

fn widths(v: &[usize]) -> String {
    if v.is_empty() {
        "none".into()
    } else {
        v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
    }
}

fn write_values(s: &mut String, vals: &[f64]) {
    let line: Vec<String> = vals.iter().map(|v| format!("{v:e}")).collect();
    s.push_str(&line.join(" "));
    s.push('\n');
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let spec = &self.student.spec;
        let mut s = String::from(MAGIC);
        s.push('\n');
        let _ = writeln!(
            s,
            "arch {} {} {} {} {} {}",
            spec.extractor.input_dim,
            widths(&spec.extractor.hidden_widths),
            spec.extractor.feature_dim,
            widths(&spec.classifier.hidden_widths),
            widths(&spec.similarity.hidden_widths),
            spec.classifier.num_classes
        );
        let t = &self.teacher;
        let _ = writeln!(s, "teacher {:e} {} {:e}", t.alpha_max, t.step, t.noise_sigma);
        if let Some(st) = &self.standardizer {
            let _ = writeln!(s, "standardizer {}", st.mean.len());
            write_values(&mut s, &st.mean);
            write_values(&mut s, &st.scale);
        }
        for (owner, state) in [("student", &self.student), ("teacher", &t.params)] {
            for set in state.param_sets() {
                for (name, tensor) in set.iter() {
                    let dims: Vec<String> = tensor.shape().iter().map(usize::to_string).collect();
                    let _ = writeln!(s, "tensor {owner}.{name} {}", dims.join(" "));
                    write_values(&mut s, tensor.values());
                }
            }
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, name: &str) -> Result<Checkpoint> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let perr = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| perr(0, format!("unexpected end of file, expected {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != MAGIC {
            return Err(perr(ln, format!("expected `{MAGIC}`")));
        }

        let num = |ln: usize, s: &str| -> Result<usize> {
            s.parse().map_err(|_| perr(ln, format!("invalid integer `{s}`")))
        };
        let real = |ln: usize, s: &str| -> Result<f64> {
            s.parse().map_err(|_| perr(ln, format!("invalid number `{s}`")))
        };
        let list = |ln: usize, s: &str| -> Result<Vec<usize>> {
            if s == "none" {
                return Ok(Vec::new());
            }
            s.split(',').map(|w| num(ln, w)).collect()
        };

        let (ln, arch) = next("arch line")?;
        let f: Vec<&str> = arch.split_whitespace().collect();
        if f.len() != 7 || f[0] != "arch" {
            return Err(perr(ln, "expected `arch` with six fields".into()));
        }
        let spec = ModelSpec::new(
            num(ln, f[1])?,
            list(ln, f[2])?,
            num(ln, f[3])?,
            list(ln, f[4])?,
            list(ln, f[5])?,
            num(ln, f[6])?,
        );
        spec.validate()?;

        let (ln, tl) = next("teacher line")?;
        let f: Vec<&str> = tl.split_whitespace().collect();
        if f.len() != 4 || f[0] != "teacher" {
            return Err(perr(ln, "expected `teacher <alpha_max> <step> <noise_sigma>`".into()));
        }
        let (alpha_max, step, noise_sigma) = (
            real(ln, f[1])?,
            f[2].parse::<u64>().map_err(|_| perr(ln, format!("invalid step `{}`", f[2])))?,
            real(ln, f[3])?,
        );

        let values = |ln: usize, s: &str, n: usize| -> Result<Vec<f64>> {
            let v: Vec<f64> = s.split_whitespace().map(|x| real(ln, x)).collect::<Result<_>>()?;
            if v.len() != n {
                return Err(perr(ln, format!("expected {n} values, found {}", v.len())));
            }
            Ok(v)
        };

        let mut standardizer = None;
        let mut student = ModelState::zeros(spec.clone())?;
        let mut teacher = ModelState::zeros(spec)?;
        let mut seen = 0usize;
        let expected = 2 * student.param_sets().iter().map(|s| s.len()).sum::<usize>();
        while let Some((ln, head)) = lines.next() {
            if head.is_empty() {
                continue;
            }
            let f: Vec<&str> = head.split_whitespace().collect();
            let (vln, body) = lines
                .next()
                .ok_or_else(|| perr(ln, "missing value line".into()))?;
            match f[0] {
                "standardizer" if f.len() == 2 && standardizer.is_none() && seen == 0 => {
                    let d = num(ln, f[1])?;
                    let mean = values(vln, body, d)?;
                    let (sln, scale_line) = lines
                        .next()
                        .ok_or_else(|| perr(vln, "missing scale line".into()))?;
                    let scale = values(sln, scale_line, d)?;
                    standardizer = Some(Standardizer { mean, scale });
                }
                "tensor" if f.len() >= 3 => {
                    let (owner, pname) = f[1]
                        .split_once('.')
                        .ok_or_else(|| perr(ln, format!("bad tensor name `{}`", f[1])))?;
                    let state = match owner {
                        "student" => &mut student,
                        "teacher" => &mut teacher,
                        _ => return Err(perr(ln, format!("unknown owner `{owner}`"))),
                    };
                    let dims: Vec<usize> = f[2..].iter().map(|d| num(ln, d)).collect::<Result<_>>()?;
                    let slot = find_param(state, pname)
                        .ok_or_else(|| perr(ln, format!("tensor `{pname}` is not part of the architecture")))?;
                    if slot.shape() != dims.as_slice() {
                        return Err(perr(
                            ln,
                            format!("tensor `{pname}` has shape {dims:?}, architecture needs {:?}", slot.shape()),
                        ));
                    }
                    let n = slot.len();
                    slot.values_mut().copy_from_slice(&values(vln, body, n)?);
                    seen += 1;
                }
                other => return Err(perr(ln, format!("unexpected record `{other}`"))),
            }
        }
        if seen != expected {
            return Err(perr(0, format!("expected {expected} tensors, found {seen}")));
        }
        let mut t = TeacherState::new(&teacher, alpha_max, noise_sigma)?;
        t.step = step;
        Ok(Checkpoint {
            student,
            teacher: t,
            standardizer,
        })
    }
}

fn find_param<'a>(state: &'a mut ModelState, name: &str) -> Option<&'a mut Tensor> {
    let set: &mut ParamSet = match name.split('.').next()? {
        "h" => &mut state.h,
        "c" => &mut state.c,
        "s" => &mut state.s,
        _ => return None,
    };
    set.get_mut(name)
}
